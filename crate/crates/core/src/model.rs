//! The full link predictor: per-cell encoder, attentive pooling, graph
//! attention over the training network, fusion, and a two-channel scoring
//! head.
//!
//! Training gradients are computed in two phases. The pooled gene matrix is a
//! fixed linear combination of per-cell encoder outputs (scores carry no
//! gradient), so after backpropagating the head and graph network to the
//! pooled matrix, each cell's encoder pass is replayed on its own tape with
//! the matching slice of that gradient. Peak memory is one cell's tape.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::autodiff::{Binding, GradientMap, Graph, Initializer, ParamStore, Var};
use crate::data::{bin_expression, node_types, BinnedMatrix, ExpressionMatrix, GeneVocabulary, LabeledPair, LabeledSplits};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::gat::{gat_forward, node_features, GatConfig, GatParams, MessageGraph};
use crate::nn::Mlp2;
use crate::pooling::{normalize_scores, pool_genes, pool_genes_values, uniform_scores};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combiner {
    Dot,
    Mlp,
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combiner::Dot => "dot",
            Combiner::Mlp => "mlp",
        })
    }
}

impl FromStr for Combiner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "dot" => Ok(Combiner::Dot),
            "mlp" => Ok(Combiner::Mlp),
            other => Err(Error::validation(format!("unknown combiner {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    pub hidden: usize,
    pub output: usize,
    pub combiner: Combiner,
    pub combiner_hidden: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            hidden: 128,
            output: 64,
            combiner: Combiner::Dot,
            combiner_hidden: 64,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    pub no_gnn: bool,
    pub no_encoder: bool,
    pub mean_pooling: bool,
}

/// The four compared configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoGnn,
    NoEncoder,
    MeanPooling,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoGnn, Variant::NoEncoder, Variant::MeanPooling];

    pub fn ablation(self) -> Ablation {
        let mut a = Ablation::default();
        match self {
            Variant::Full => {}
            Variant::NoGnn => a.no_gnn = true,
            Variant::NoEncoder => a.no_encoder = true,
            Variant::MeanPooling => a.mean_pooling = true,
        }
        a
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGnn => "no_gnn",
            Variant::NoEncoder => "no_encoder",
            Variant::MeanPooling => "mean_pooling",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub gat: GatConfig,
    pub head: HeadConfig,
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn fused_width(&self) -> usize {
        self.encoder.embed_dim + self.gat.output_width()
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.gat.validate()?;
        if self.head.hidden == 0 || self.head.output == 0 || self.head.combiner_hidden == 0 {
            return Err(Error::validation("scoring head widths must be positive"));
        }
        Ok(())
    }
}

/// Everything the model reads from one dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: GeneVocabulary,
    pub cell_ids: Vec<String>,
    pub bins: BinnedMatrix,
    pub features: Tensor,
    pub message_graph: MessageGraph,
    pub splits: LabeledSplits,
}

impl Dataset {
    /// Bins the counts, derives node features, and builds the message graph
    /// from training positives only.
    pub fn new(expr: &ExpressionMatrix, splits: LabeledSplits, bin_count: usize) -> Result<Self> {
        splits.validate(&expr.vocab)?;
        let bins = bin_expression(expr, bin_count)?;
        let features = node_features(expr);
        let message_graph = MessageGraph::new(&node_types(&expr.vocab), &splits.structure_pairs())?;
        Ok(Dataset {
            vocab: expr.vocab.clone(),
            cell_ids: expr.cell_ids.clone(),
            bins,
            features,
            message_graph,
            splits,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_cells(&self) -> usize {
        self.bins.n_cells()
    }
}

#[derive(Clone, Debug)]
pub struct ScoringHead {
    pub tf_channel: Mlp2,
    pub target_channel: Mlp2,
    pub combiner: Option<Mlp2>,
}

/// Per-gene outputs of both channels: everything needed to score any pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelOutputs {
    pub tf: Tensor,
    pub target: Tensor,
}

/// Encoder outputs for all cells with their pooling scores.
pub struct EncodedCells {
    pub hidden: Vec<Tensor>,
    pub attention_sums: Option<Tensor>,
    pub scores: Tensor,
    pub pooled: Tensor,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Option<Encoder>,
    pub gat: Option<GatParams>,
    pub head: ScoringHead,
    pub n_genes: usize,
    pub n_cells: usize,
}

pub struct LossAndGrads {
    pub loss: f64,
    pub logits: Vec<f64>,
    pub eval_logits: Vec<f64>,
    pub grads: GradientMap,
}

fn pair_index(pairs: &[LabeledPair]) -> (Arc<[usize]>, Arc<[usize]>) {
    (
        pairs.iter().map(|p| p.tf).collect(),
        pairs.iter().map(|p| p.target).collect(),
    )
}

impl Model {
    pub fn new(config: &ModelConfig, n_genes: usize, n_cells: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let init = Initializer::new(seed);
        let mut store = ParamStore::new();
        let ab = config.ablation;
        if ab.no_gnn && ab.no_encoder {
            log::warn!("both the encoder and the graph network are disabled; fused embeddings are all zero");
        }
        let encoder = if ab.no_encoder {
            None
        } else {
            Some(Encoder::new(config.encoder.clone(), n_genes, &mut store, &init)?)
        };
        let gat = if ab.no_gnn {
            None
        } else {
            Some(GatParams::register(&mut store, &init, &config.gat, n_cells)?)
        };
        let fused = config.fused_width();
        let h = &config.head;
        // Both channels start from the same values, so an untrained dot
        // combiner scores pairs by similarity of their fused representations.
        let head = ScoringHead {
            tf_channel: Mlp2::register_with_stream(&mut store, &init, "head.tf", "head.channel", fused, h.hidden, h.output)?,
            target_channel: Mlp2::register_with_stream(&mut store, &init, "head.target", "head.channel", fused, h.hidden, h.output)?,
            combiner: match h.combiner {
                Combiner::Dot => None,
                Combiner::Mlp => Some(Mlp2::register(&mut store, &init, "head.combiner", 2 * h.output, h.combiner_hidden, 1)?),
            },
        };
        Ok(Model {
            config: config.clone(),
            store,
            encoder,
            gat,
            head,
            n_genes,
            n_cells,
        })
    }

    fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.n_genes() != self.n_genes || data.n_cells() != self.n_cells {
            return Err(Error::validation(format!(
                "model expects {} genes x {} cells, data has {} x {}",
                self.n_genes,
                self.n_cells,
                data.n_genes(),
                data.n_cells()
            )));
        }
        if data.bins.bin_count != self.config.encoder.bin_count {
            return Err(Error::validation(format!(
                "data binned into {} bins, encoder expects {}",
                data.bins.bin_count, self.config.encoder.bin_count
            )));
        }
        Ok(())
    }

    fn scores_from(&self, sums: Option<&Tensor>) -> Result<Tensor> {
        match sums {
            Some(s) if !self.config.ablation.mean_pooling => normalize_scores(s),
            _ => Ok(uniform_scores(self.n_cells, self.n_genes)),
        }
    }

    /// Runs the encoder over every cell without recording gradients.
    pub fn encode_cells(&self, data: &Dataset) -> Result<Option<EncodedCells>> {
        self.check_data(data)?;
        let Some(enc) = &self.encoder else { return Ok(None) };
        let mut hidden = Vec::with_capacity(data.n_cells());
        let mut sums = Vec::with_capacity(data.n_cells() * data.n_genes());
        for c in 0..data.n_cells() {
            let mut g = Graph::new();
            let mut bind = Binding::new(&self.store);
            let st = enc.forward(&mut g, &mut bind, data.bins.cell(c))?;
            hidden.push(g.value(st.output()).clone());
            sums.extend_from_slice(&st.attention_sum);
        }
        let attention_sums = if enc.config.layers > 0 {
            Some(Tensor::matrix(data.n_cells(), data.n_genes(), sums)?)
        } else {
            None
        };
        let scores = self.scores_from(attention_sums.as_ref())?;
        let pooled = pool_genes_values(&hidden, &scores)?;
        Ok(Some(EncodedCells {
            hidden,
            attention_sums,
            scores,
            pooled,
        }))
    }

    /// Concatenates the pooled encoder block and the graph block; ablated
    /// blocks are zero.
    pub fn fuse(&self, g: &mut Graph, bind: &mut Binding<'_>, pooled: Option<Var>, data: &Dataset) -> Result<Var> {
        let t = data.n_genes();
        let z = match pooled {
            Some(z) => z,
            None => g.constant(Tensor::zeros(&[t, self.config.encoder.embed_dim])),
        };
        let gnn = match &self.gat {
            Some(p) => {
                let x = g.constant(data.features.clone());
                gat_forward(g, bind, p, x, &data.message_graph)?.output()
            }
            None => g.constant(Tensor::zeros(&[t, self.config.gat.output_width()])),
        };
        fuse(g, z, gnn)
    }

    fn channels(&self, g: &mut Graph, bind: &mut Binding<'_>, fused: Var) -> Result<(Var, Var)> {
        let a = self.head.tf_channel.forward(g, bind, fused)?;
        let b = self.head.target_channel.forward(g, bind, fused)?;
        Ok((a, b))
    }

    fn pair_logits(&self, g: &mut Graph, bind: &mut Binding<'_>, a: Var, b: Var, pairs: &[LabeledPair]) -> Result<Var> {
        let (ti, gi) = pair_index(pairs);
        let ai = g.gather_rows(a, ti)?;
        let bj = g.gather_rows(b, gi)?;
        combine(g, bind, &self.head, ai, bj)
    }

    /// Full forward on one tape: encoder for every cell, pooling, graph
    /// network, head, and mean cross-entropy over `pairs`.
    pub fn loss_graph(&self, g: &mut Graph, bind: &mut Binding<'_>, data: &Dataset, pairs: &[LabeledPair]) -> Result<Var> {
        self.check_data(data)?;
        let pooled = match &self.encoder {
            Some(enc) => {
                let mut hidden = Vec::with_capacity(data.n_cells());
                let mut sums = Vec::new();
                for c in 0..data.n_cells() {
                    let st = enc.forward(g, bind, data.bins.cell(c))?;
                    hidden.push(st.output());
                    sums.extend_from_slice(&st.attention_sum);
                }
                let sums = if enc.config.layers > 0 {
                    Some(Tensor::matrix(data.n_cells(), data.n_genes(), sums)?)
                } else {
                    None
                };
                let scores = self.scores_from(sums.as_ref())?;
                Some(pool_genes(g, &hidden, &scores)?)
            }
            None => None,
        };
        let fused = self.fuse(g, bind, pooled, data)?;
        let (a, b) = self.channels(g, bind, fused)?;
        let z = self.pair_logits(g, bind, a, b, pairs)?;
        g.bce_with_logits(z, labels(pairs))
    }

    /// Mean cross-entropy over `pairs` and its gradient for every parameter,
    /// plus logits for `eval_pairs` from the same forward pass.
    pub fn loss_and_grads(&self, data: &Dataset, pairs: &[LabeledPair], eval_pairs: &[LabeledPair]) -> Result<LossAndGrads> {
        let cells = self.encode_cells(data)?;
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let z = cells.as_ref().map(|c| g.leaf(c.pooled.clone().with_grad()));
        let fused = self.fuse(&mut g, &mut bind, z, data)?;
        let (a, b) = self.channels(&mut g, &mut bind, fused)?;
        let eval_logits = if eval_pairs.is_empty() {
            Vec::new()
        } else {
            let e = self.pair_logits(&mut g, &mut bind, a, b, eval_pairs)?;
            g.value(e).data().to_vec()
        };
        let logits = self.pair_logits(&mut g, &mut bind, a, b, pairs)?;
        let loss = g.bce_with_logits(logits, labels(pairs))?;
        let loss_value = g.value(loss).item();
        let logit_values = g.value(logits).data().to_vec();
        let wrt: Vec<Var> = z.into_iter().collect();
        let (mut grads, dz) = g.backward_with(loss, &wrt)?;
        drop(g);

        if let (Some(enc), Some(cells)) = (&self.encoder, &cells) {
            let dz = &dz[0];
            for c in 0..data.n_cells() {
                let mut seed = dz.clone();
                for t in 0..data.n_genes() {
                    let s = cells.scores.get(c, t);
                    seed.row_mut(t).iter_mut().for_each(|v| *v *= s);
                }
                let mut g = Graph::new();
                let mut bind = Binding::new(&self.store);
                let st = enc.forward(&mut g, &mut bind, data.bins.cell(c))?;
                let seed = g.constant(seed);
                let prod = g.mul(st.output(), seed)?;
                let l = g.sum_all(prod);
                grads.merge(&g.backward(l)?);
            }
        }
        grads.fill_missing(&self.store);
        Ok(LossAndGrads {
            loss: loss_value,
            logits: logit_values,
            eval_logits,
            grads,
        })
    }

    /// Both channel outputs for every gene.
    pub fn channel_outputs(&self, data: &Dataset) -> Result<ChannelOutputs> {
        let cells = self.encode_cells(data)?;
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let z = cells.map(|c| g.constant(c.pooled));
        let fused = self.fuse(&mut g, &mut bind, z, data)?;
        let (a, b) = self.channels(&mut g, &mut bind, fused)?;
        Ok(ChannelOutputs {
            tf: g.value(a).clone(),
            target: g.value(b).clone(),
        })
    }

    /// Probabilities for `(tf, target)` pairs from precomputed channel outputs.
    pub fn score_pairs(&self, channels: &ChannelOutputs, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let t = channels.tf.rows();
        if let Some(&(a, b)) = pairs.iter().find(|&&(a, b)| a >= t || b >= t) {
            return Err(Error::contract(format!("pair ({a}, {b}) outside {t} genes")));
        }
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let a = g.constant(channels.tf.clone());
        let b = g.constant(channels.target.clone());
        let ti: Arc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let gi: Arc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let ai = g.gather_rows(a, ti)?;
        let bj = g.gather_rows(b, gi)?;
        let z = combine(&mut g, &mut bind, &self.head, ai, bj)?;
        let p = g.sigmoid(z);
        Ok(g.value(p).data().to_vec())
    }

    /// Probability for one pair of fused gene rows.
    pub fn score_pair(&self, fused_i: &[f64], fused_j: &[f64]) -> Result<f64> {
        let w = self.config.fused_width();
        if fused_i.len() != w || fused_j.len() != w {
            return Err(Error::shape("score_pair", format!("rows of width {} and {}, expected {w}", fused_i.len(), fused_j.len())));
        }
        let mut g = Graph::new();
        let mut bind = Binding::new(&self.store);
        let fi = g.constant(Tensor::matrix(1, w, fused_i.to_vec())?);
        let fj = g.constant(Tensor::matrix(1, w, fused_j.to_vec())?);
        let a = self.head.tf_channel.forward(&mut g, &mut bind, fi)?;
        let b = self.head.target_channel.forward(&mut g, &mut bind, fj)?;
        let z = combine(&mut g, &mut bind, &self.head, a, b)?;
        let p = g.sigmoid(z);
        Ok(g.value(p).item())
    }
}

/// Row-wise concatenation of the two gene representations.
pub fn fuse(g: &mut Graph, pooled: Var, gnn: Var) -> Result<Var> {
    if g.shape(pooled)[0] != g.shape(gnn)[0] {
        return Err(Error::contract(format!(
            "cannot fuse {} pooled rows with {} graph rows",
            g.shape(pooled)[0],
            g.shape(gnn)[0]
        )));
    }
    g.concat_cols(&[pooled, gnn])
}

fn combine(g: &mut Graph, bind: &mut Binding<'_>, head: &ScoringHead, a: Var, b: Var) -> Result<Var> {
    match &head.combiner {
        None => g.row_dot(a, b),
        Some(mlp) => {
            let x = g.concat_cols(&[a, b])?;
            mlp.forward(g, bind, x)
        }
    }
}

fn labels(pairs: &[LabeledPair]) -> Arc<[f64]> {
    pairs.iter().map(|p| p.label as f64).collect()
}

pub const PROBABILITY_FLOOR: f64 = 1e-7;

/// Mean binary cross-entropy of probabilities clamped to
/// `[1e-7, 1 - 1e-7]`, evaluated through the equivalent logits.
pub fn bce_loss(probabilities: &[f64], labels: &[u8]) -> Result<f64> {
    if probabilities.len() != labels.len() {
        return Err(Error::contract(format!("{} probabilities for {} labels", probabilities.len(), labels.len())));
    }
    if probabilities.is_empty() {
        return Err(Error::contract("binary cross-entropy of an empty batch"));
    }
    let mut total = 0.0;
    for (&p, &y) in probabilities.iter().zip(labels) {
        if y > 1 || p.is_nan() {
            return Err(Error::contract("labels must be 0/1 and probabilities numeric"));
        }
        let p = p.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR);
        let z = (p / (1.0 - p)).ln();
        let y = y as f64;
        total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    }
    Ok(total / probabilities.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.5, 0.5], &[1, 0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[1.0, 0.0], &[1, 0]).unwrap() < 1e-6);
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((bce_loss(&[0.9, 0.2], &[1, 0]).unwrap() - want).abs() < 1e-12);
        assert!(bce_loss(&[], &[]).is_err());
    }

    #[test]
    fn fuse_widths_add() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[4, 2]));
        let b = g.constant(Tensor::zeros(&[4, 3]));
        let f = fuse(&mut g, a, b).unwrap();
        assert_eq!(g.shape(f), &[4, 5]);
        let c = g.constant(Tensor::zeros(&[3, 3]));
        assert!(fuse(&mut g, a, c).is_err());
    }

    #[test]
    fn variants_name_their_ablation() {
        assert_eq!(Variant::Full.ablation(), Ablation::default());
        assert!(Variant::NoGnn.ablation().no_gnn);
        assert!(Variant::NoEncoder.ablation().no_encoder);
        assert!(Variant::MeanPooling.ablation().mean_pooling);
    }
}
