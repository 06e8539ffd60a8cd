#![allow(dead_code)]

pub mod gradcheck;
pub mod oracles;

use grnlink_core::data::{ExpressionMatrix, GeneVocabulary, LabeledPair, LabeledSplits};
use grnlink_core::encoder::AttentionMode;
use grnlink_core::model::{Dataset, ModelConfig};
use grnlink_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Tensor {
    let d = Normal::new(0.0, sd).unwrap();
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| d.sample(rng)).collect()).unwrap()
}

pub fn pair(tf: usize, target: usize, label: u8) -> LabeledPair {
    LabeledPair { tf, target, label }
}

/// Six genes (G0, G1 are TFs) in three cells with hand-placed splits.
pub fn six_gene_dataset(bin_count: usize) -> Dataset {
    let mut vocab = GeneVocabulary::new(&["G0", "G1", "G2", "G3", "G4", "G5"]).unwrap();
    vocab.set_tf(0);
    vocab.set_tf(1);
    let counts = Tensor::from_rows(&[
        vec![5.0, 0.0, 3.0, 1.0, 0.0, 8.0],
        vec![2.0, 7.0, 0.0, 4.0, 1.0, 0.0],
        vec![0.0, 3.0, 6.0, 2.0, 9.0, 1.0],
    ])
    .unwrap();
    let expr = ExpressionMatrix::new(counts, vocab, vec!["c0".into(), "c1".into(), "c2".into()]).unwrap();
    let splits = LabeledSplits {
        train: vec![pair(0, 2, 1), pair(0, 4, 0), pair(1, 3, 1), pair(1, 5, 0)],
        validation: vec![pair(0, 3, 1), pair(1, 4, 0)],
        test: vec![pair(0, 5, 1), pair(1, 2, 0)],
        seed: 0,
    };
    Dataset::new(&expr, splits, bin_count).unwrap()
}

pub fn tiny_config(mode: AttentionMode) -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.embed_dim = 4;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.encoder.ff_dim = 6;
    c.encoder.mode = mode;
    c.encoder.features = 8;
    c.encoder.bin_count = 5;
    c.gat.widths = vec![4, 3];
    c.gat.type_dim = 2;
    c.gat.relation_dim = 2;
    c.gat.relation_hidden = 3;
    c.head.hidden = 5;
    c.head.output = 3;
    c.head.combiner_hidden = 4;
    c
}

/// A desk-sized encoder and graph network for runs on synthetic data.
pub fn small_config() -> ModelConfig {
    let mut c = ModelConfig::default();
    c.encoder.embed_dim = 16;
    c.encoder.layers = 1;
    c.encoder.heads = 2;
    c.encoder.ff_dim = 32;
    c.encoder.features = 16;
    c
}

pub fn synth_dataset(genes: usize, tfs: usize, cells: usize, p: f64, seed: u64, bin_count: usize) -> Dataset {
    use grnlink_core::data::{make_splits, network_density, synth_generate, SamplingPlan, SynthConfig};
    let (expr, net) = synth_generate(&SynthConfig::new(genes, tfs, cells, p, 0.3, seed)).unwrap();
    let plan = SamplingPlan::new(network_density(&net, &expr.vocab).unwrap(), 1.0).unwrap();
    let splits = make_splits(&net, &expr.vocab, &plan, seed).unwrap();
    Dataset::new(&expr, splits, bin_count).unwrap()
}

pub fn lin(store: &grnlink_core::autodiff::ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = store.get(store.find(&format!("{name}.weight")).unwrap());
    let mut y = vec![0.0; w.cols()];
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += xi * w.get(i, j);
        }
    }
    if let Some(b) = store.find(&format!("{name}.bias")) {
        for (yj, bj) in y.iter_mut().zip(store.get(b).data()) {
            *yj += bj;
        }
    }
    y
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn mlp(store: &grnlink_core::autodiff::ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = lin(store, &format!("{name}.0"), x).into_iter().map(gelu).collect();
    lin(store, &format!("{name}.1"), &h)
}
