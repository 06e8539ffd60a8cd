#![no_main]

use grnlink_core::data::{parse_network, GeneVocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let mut vocab = GeneVocabulary::new(&["SOX2", "POU5F1", "NANOG", "GATA6", "KLF4"]).unwrap();
    let _ = parse_network(data, &mut vocab);
});
