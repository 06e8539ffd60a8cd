#![no_main]

use grnlink_core::data::{parse_splits, GeneVocabulary};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let mut vocab = GeneVocabulary::new(&["SOX2", "POU5F1", "NANOG", "GATA6"]).unwrap();
    vocab.set_tf(0);
    vocab.set_tf(1);
    if let Ok(splits) = parse_splits(text, &vocab) {
        let _ = splits.validate(&vocab);
    }
});
