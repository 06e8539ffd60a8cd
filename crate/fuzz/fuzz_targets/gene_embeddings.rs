#![no_main]

use grnlink_core::data::GeneVocabulary;
use grnlink_core::encoder::parse_gene_embeddings;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let vocab = GeneVocabulary::new(&["SOX2", "POU5F1", "NANOG"]).unwrap();
    let _ = parse_gene_embeddings(data, &vocab, 4);
});
