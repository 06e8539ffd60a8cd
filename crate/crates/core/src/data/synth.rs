//! Synthetic datasets with a planted regulatory network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Uniform};

use super::expression::ExpressionMatrix;
use super::network::PriorNetwork;
use super::vocab::GeneVocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_genes: usize,
    pub n_tfs: usize,
    pub n_cells: usize,
    pub edge_prob: f64,
    /// Noise standard deviation as a multiple of each target's clean-signal
    /// standard deviation across cells.
    pub noise_sd: f64,
    pub seed: u64,
    /// Regulatory weights are drawn from `U[weight_low, weight_high]`.
    pub weight_low: f64,
    pub weight_high: f64,
    /// Log-normal parameters for TF and unregulated gene expression.
    pub log_mean: f64,
    pub log_sd: f64,
}

impl SynthConfig {
    pub fn new(n_genes: usize, n_tfs: usize, n_cells: usize, edge_prob: f64, noise_sd: f64, seed: u64) -> Self {
        SynthConfig {
            n_genes,
            n_tfs,
            n_cells,
            edge_prob,
            noise_sd,
            seed,
            weight_low: 0.5,
            weight_high: 1.5,
            log_mean: 2.0,
            log_sd: 0.8,
        }
    }

    pub fn expected_edges(&self) -> f64 {
        self.n_tfs as f64 * (self.n_genes - self.n_tfs) as f64 * self.edge_prob
    }

    fn validate(&self) -> Result<()> {
        if self.n_tfs == 0 || self.n_tfs >= self.n_genes {
            return Err(Error::validation(format!(
                "need 0 < n_tfs < n_genes, got n_tfs={} n_genes={}",
                self.n_tfs, self.n_genes
            )));
        }
        if self.n_cells == 0 {
            return Err(Error::validation("n_cells must be positive"));
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return Err(Error::validation(format!("edge_prob must lie in (0, 1], got {}", self.edge_prob)));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::validation(format!("noise_sd must be finite and nonnegative, got {}", self.noise_sd)));
        }
        if !(self.weight_low > 0.0 && self.weight_low <= self.weight_high && self.weight_high.is_finite()) {
            return Err(Error::validation("regulatory weights must satisfy 0 < low <= high"));
        }
        if !(self.log_sd > 0.0 && self.log_mean.is_finite() && self.log_sd.is_finite()) {
            return Err(Error::validation("log-normal parameters must be finite with positive sd"));
        }
        Ok(())
    }
}

/// Generates counts and the planted network. Genes `G0..` are named in order;
/// the first `n_tfs` are TFs, and edges only run from TFs to non-TFs, so
/// every target is a linear image of TF expression.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(ExpressionMatrix, PriorNetwork)> {
    cfg.validate()?;
    if cfg.expected_edges() < 1.0 {
        log::warn!(
            "synthetic parameters give {:.3} expected edges; the planted network may be empty",
            cfg.expected_edges()
        );
    }
    let (t, n, k) = (cfg.n_genes, cfg.n_cells, cfg.n_tfs);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let edge_draw = Uniform::new(0.0, 1.0);
    let weight_draw = Uniform::new_inclusive(cfg.weight_low, cfg.weight_high);

    // regulators[g] = (tf, weight) list for non-TF g.
    let mut regulators: Vec<Vec<(usize, f64)>> = vec![Vec::new(); t];
    let mut pairs = Vec::new();
    for tf in 0..k {
        for g in k..t {
            if edge_draw.sample(&mut rng) < cfg.edge_prob {
                let w = weight_draw.sample(&mut rng);
                regulators[g].push((tf, w));
                pairs.push((tf, g));
            }
        }
    }

    let base = LogNormal::new(cfg.log_mean, cfg.log_sd).expect("validated parameters");
    let mut counts = vec![0.0; n * t];
    for c in 0..n {
        for tf in 0..k {
            counts[c * t + tf] = base.sample(&mut rng).round();
        }
    }
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    for g in k..t {
        if regulators[g].is_empty() {
            for c in 0..n {
                counts[c * t + g] = base.sample(&mut rng).round();
            }
            continue;
        }
        let clean: Vec<f64> = (0..n)
            .map(|c| regulators[g].iter().map(|&(tf, w)| w * counts[c * t + tf]).sum())
            .collect();
        let mean = clean.iter().sum::<f64>() / n as f64;
        let sd = (clean.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let scale = cfg.noise_sd * sd;
        for (c, v) in clean.iter().enumerate() {
            let noise = if scale > 0.0 { scale * unit.sample(&mut rng) } else { 0.0 };
            counts[c * t + g] = (v + noise).max(0.0).round();
        }
    }
    // Keep at least one nonzero entry so the matrix can be binned.
    if counts.iter().all(|&v| v == 0.0) {
        let pick = rng.gen_range(0..counts.len());
        counts[pick] = 1.0;
    }

    let names: Vec<String> = (0..t).map(|i| format!("G{i}")).collect();
    let mut vocab = GeneVocabulary::new(&names)?;
    for tf in 0..k {
        vocab.set_tf(tf);
    }
    let cell_ids = (0..n).map(|c| format!("cell{c}")).collect();
    let net = PriorNetwork::from_pairs(&pairs, &vocab)?;
    let x = ExpressionMatrix::new(Tensor::matrix(n, t, counts)?, vocab, cell_ids)?;
    Ok((x, net))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_single_regulator_copies_counts() {
        let mut cfg = SynthConfig::new(2, 1, 30, 1.0, 0.0, 5);
        cfg.weight_low = 1.0;
        cfg.weight_high = 1.0;
        let (x, net) = synth_generate(&cfg).unwrap();
        assert_eq!(net.pairs(), vec![(0, 1)]);
        for c in 0..30 {
            assert_eq!(x.get(c, 0), x.get(c, 1));
        }
    }

    #[test]
    fn full_probability_connects_every_tf_to_every_target() {
        let cfg = SynthConfig::new(12, 3, 10, 1.0, 0.3, 1);
        let (_, net) = synth_generate(&cfg).unwrap();
        assert_eq!(net.len(), 3 * 9);
    }

    #[test]
    fn seeded_output_is_bit_identical() {
        let cfg = SynthConfig::new(40, 5, 25, 0.2, 0.3, 77);
        let (a, na) = synth_generate(&cfg).unwrap();
        let (b, nb) = synth_generate(&cfg).unwrap();
        let bits = |x: &ExpressionMatrix| x.counts.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(na, nb);
    }

    #[test]
    fn rejects_tf_count_not_below_gene_count() {
        assert!(synth_generate(&SynthConfig::new(5, 5, 10, 0.5, 0.1, 0)).is_err());
    }

    #[test]
    fn sparse_parameters_warn_but_succeed() {
        let cfg = SynthConfig::new(3, 1, 5, 0.01, 0.1, 0);
        assert!(cfg.expected_edges() < 1.0);
        assert!(synth_generate(&cfg).is_ok());
    }
}
