//! Per-cell transformer encoder over gene tokens: identity plus expression-bin
//! embeddings, then pre-norm blocks with exact softmax or positive random
//! feature (kernel) attention.

use std::fmt;
use std::io::Read;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{stream_seed, Binding, Graph, Initializer, ParamId, ParamStore, Stabilizer, Var};
use crate::data::GeneVocabulary;
use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear};
use crate::pooling::{attention_sum, attention_sum_linear, average_attention};
use crate::tensor::Tensor;

pub const EMBEDDING_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    Exact,
    Performer,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::Exact => "exact",
            AttentionMode::Performer => "performer",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "exact" => Ok(AttentionMode::Exact),
            "performer" => Ok(AttentionMode::Performer),
            other => Err(Error::validation(format!("unknown attention mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub mode: AttentionMode,
    pub features: usize,
    pub bin_count: usize,
    /// Exact mode only: divide `QK^T` by its row sums instead of a softmax.
    pub raw_normalization: bool,
    pub feature_seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            mode: AttentionMode::Performer,
            features: 64,
            bin_count: 51,
            raw_normalization: false,
            feature_seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::validation(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.ff_dim == 0 {
            return Err(Error::validation("feedforward width must be positive"));
        }
        if self.mode == AttentionMode::Performer && self.features == 0 {
            return Err(Error::validation("performer mode needs at least one random feature"));
        }
        if self.bin_count < 2 {
            return Err(Error::validation("bin_count must be at least 2"));
        }
        Ok(())
    }
}

/// Fixed Gaussian projection for positive random features of one head.
#[derive(Clone, Debug, PartialEq)]
pub struct PerformerFeatureMap {
    pub omega: Arc<Tensor>,
    /// Inputs are multiplied by `head_dim^(-1/4)` so that feature inner
    /// products estimate `exp(q.k / sqrt(head_dim))`.
    pub input_scale: f64,
    pub c: f64,
    pub seed: u64,
}

impl PerformerFeatureMap {
    pub fn new(head_dim: usize, features: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..head_dim * features)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        PerformerFeatureMap {
            omega: Arc::new(Tensor::matrix(head_dim, features, data).expect("consistent shape")),
            input_scale: (head_dim as f64).powf(-0.25),
            c: 1.0,
            seed,
        }
    }

    pub fn features(&self) -> usize {
        self.omega.cols()
    }

    fn apply(&self, g: &mut Graph, x: Var, stabilizer: Stabilizer) -> Result<Var> {
        let f = g.positive_features(x, self.omega.clone(), self.input_scale, stabilizer)?;
        Ok(if self.c == 1.0 { f } else { g.scale(f, self.c) })
    }
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    pub norm1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub gene_table: ParamId,
    pub bin_table: ParamId,
    pub blocks: Vec<BlockParams>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: EncoderParams,
    pub feature_maps: Vec<Vec<PerformerFeatureMap>>,
    pub n_genes: usize,
}

/// Hidden states `H^0..H^L` of one cell plus its attention statistics.
pub struct EncoderState {
    pub hidden: Vec<Var>,
    /// Exact mode: one `T x T` matrix per layer and head, layer-major.
    pub attention: Vec<Tensor>,
    /// Attention received per gene, averaged over layers and heads. Empty
    /// when there are no layers.
    pub attention_sum: Vec<f64>,
}

impl EncoderState {
    pub fn output(&self) -> Var {
        *self.hidden.last().expect("H^0 always present")
    }
}

impl Encoder {
    pub fn new(config: EncoderConfig, n_genes: usize, store: &mut ParamStore, init: &Initializer) -> Result<Self> {
        config.validate()?;
        let d = config.embed_dim;
        let gene_table = store.register("encoder.gene_table", init.normal("encoder.gene_table", &[n_genes, d], EMBEDDING_STD))?;
        let bin_table = store.register(
            "encoder.bin_table",
            init.normal("encoder.bin_table", &[config.bin_count, d], EMBEDDING_STD),
        )?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.block{l}");
            blocks.push(BlockParams {
                norm1: LayerNorm::register(store, &format!("{p}.norm1"), d)?,
                query: Linear::register(store, init, &format!("{p}.query"), d, d, true)?,
                key: Linear::register(store, init, &format!("{p}.key"), d, d, true)?,
                value: Linear::register(store, init, &format!("{p}.value"), d, d, true)?,
                output: Linear::register(store, init, &format!("{p}.output"), d, d, true)?,
                norm2: LayerNorm::register(store, &format!("{p}.norm2"), d)?,
                ff1: Linear::register(store, init, &format!("{p}.ff1"), d, config.ff_dim, true)?,
                ff2: Linear::register(store, init, &format!("{p}.ff2"), config.ff_dim, d, true)?,
            });
        }
        let feature_maps = Self::draw_feature_maps(&config);
        Ok(Encoder {
            config,
            params: EncoderParams {
                gene_table,
                bin_table,
                blocks,
            },
            feature_maps,
            n_genes,
        })
    }

    fn draw_feature_maps(config: &EncoderConfig) -> Vec<Vec<PerformerFeatureMap>> {
        if config.mode != AttentionMode::Performer {
            return Vec::new();
        }
        (0..config.layers)
            .map(|l| {
                (0..config.heads)
                    .map(|h| {
                        let seed = stream_seed(config.feature_seed, &format!("performer.layer{l}.head{h}"));
                        PerformerFeatureMap::new(config.head_dim(), config.features, seed)
                    })
                    .collect()
            })
            .collect()
    }

    /// Embeds one cell's bins and runs every block.
    pub fn forward(&self, g: &mut Graph, bind: &mut Binding<'_>, bins: &[usize]) -> Result<EncoderState> {
        let gene = bind.var(g, self.params.gene_table);
        let bin = bind.var(g, self.params.bin_table);
        let h0 = embed_inputs(g, gene, bin, bins)?;
        encoder_forward(g, bind, h0, self)
    }
}

/// `H^0[t] = gene_table[t] + bin_table[bins[t]]`.
pub fn embed_inputs(g: &mut Graph, gene_table: Var, bin_table: Var, bins: &[usize]) -> Result<Var> {
    let (t, b) = (g.shape(gene_table)[0], g.shape(bin_table)[0]);
    if bins.len() != t {
        return Err(Error::shape("embed_inputs", format!("{} bins for {} genes", bins.len(), t)));
    }
    if let Some(&bad) = bins.iter().find(|&&x| x >= b) {
        return Err(Error::contract(format!("bin id {bad} out of range for {b} bins")));
    }
    let e = g.gather_rows(bin_table, Arc::from(bins))?;
    g.add(gene_table, e)
}

pub fn encoder_forward(g: &mut Graph, bind: &mut Binding<'_>, h0: Var, enc: &Encoder) -> Result<EncoderState> {
    let cfg = &enc.config;
    let t = g.shape(h0)[0];
    let dh = cfg.head_dim();
    let mut hidden = vec![h0];
    let mut attention = Vec::new();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let ones = g.constant(Tensor::full(&[t, 1], 1.0));
    let mut x = h0;
    for (l, block) in enc.params.blocks.iter().enumerate() {
        let xn = block.norm1.forward(g, bind, x)?;
        let q = block.query.forward(g, bind, xn)?;
        let k = block.key.forward(g, bind, xn)?;
        let v = block.value.forward(g, bind, xn)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            match cfg.mode {
                AttentionMode::Exact => {
                    let (out, a) = exact_head(g, qh, kh, vh, cfg.raw_normalization)?;
                    attention.push(g.value(a).clone());
                    heads.push(out);
                }
                AttentionMode::Performer => {
                    let p = performer_head(g, qh, kh, vh, &enc.feature_maps[l][h], ones)?;
                    sums.push(attention_sum_linear(g.value(p.qp), g.value(p.kp))?);
                    heads.push(p.output);
                }
            }
        }
        let merged = g.concat_cols(&heads)?;
        let attn = block.output.forward(g, bind, merged)?;
        let h1 = g.add(x, attn)?;
        let hn = block.norm2.forward(g, bind, h1)?;
        let f = block.ff1.forward(g, bind, hn)?;
        let f = g.gelu(f);
        let f = block.ff2.forward(g, bind, f)?;
        x = g.add(h1, f)?;
        hidden.push(x);
    }
    let attention_sum = match cfg.mode {
        _ if cfg.layers == 0 => Vec::new(),
        AttentionMode::Exact => attention_sum(&average_attention(&attention)?)?,
        AttentionMode::Performer => {
            let k = sums.len() as f64;
            let mut acc = vec![0.0; t];
            for s in &sums {
                for (a, v) in acc.iter_mut().zip(s) {
                    *a += v;
                }
            }
            acc.iter_mut().for_each(|a| *a /= k);
            acc
        }
    };
    Ok(EncoderState {
        hidden,
        attention,
        attention_sum,
    })
}

fn exact_head(g: &mut Graph, q: Var, k: Var, v: Var, raw: bool) -> Result<(Var, Var)> {
    let s = g.matmul_nt(q, k)?;
    let a = if raw {
        let t = g.shape(s)[1];
        let ones = g.constant(Tensor::full(&[t, 1], 1.0));
        let rowsum = g.matmul(s, ones)?;
        g.div_rows(s, rowsum)?
    } else {
        let dh = g.shape(q)[1] as f64;
        let s = g.scale(s, 1.0 / dh.sqrt());
        g.softmax_rows(s)?
    };
    Ok((g.matmul(a, v)?, a))
}

struct PerformerHead {
    output: Var,
    qp: Var,
    kp: Var,
}

fn performer_head(g: &mut Graph, q: Var, k: Var, v: Var, fm: &PerformerFeatureMap, ones: Var) -> Result<PerformerHead> {
    let qp = fm.apply(g, q, Stabilizer::RowMax)?;
    let kp = fm.apply(g, k, Stabilizer::GlobalMax)?;
    let kv = g.matmul_tn(kp, v)?;
    let num = g.matmul(qp, kv)?;
    let ksum = g.matmul_tn(kp, ones)?;
    let den = g.matmul(qp, ksum)?;
    if g.value(den).data().iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("kernel attention normaliser".into()));
    }
    if g.value(den).data().iter().any(|d| *d <= 0.0) {
        return Err(Error::contract("kernel attention normaliser is not positive"));
    }
    let output = g.div_rows(num, den)?;
    Ok(PerformerHead { output, qp, kp })
}

/// `softmax(QK^T / sqrt(d)) V` and the attention matrix, outside any model.
pub fn exact_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    check_qkv(q, k, v)?;
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (out, a) = exact_head(&mut g, qv, kv, vv, false)?;
    Ok((g.value(out).clone(), g.value(a).clone()))
}

/// Kernel attention `D^-1 (Q'((K')^T V))` without forming the `L x L` matrix.
pub fn performer_attention(q: &Tensor, k: &Tensor, v: &Tensor, fm: &PerformerFeatureMap) -> Result<Tensor> {
    check_qkv(q, k, v)?;
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let ones = g.constant(Tensor::full(&[q.rows(), 1], 1.0));
    let p = performer_head(&mut g, qv, kv, vv, fm, ones)?;
    Ok(g.value(p.output).clone())
}

/// Unstabilised `(Q', K')` features, for inspection and tests.
pub fn performer_features(q: &Tensor, k: &Tensor, fm: &PerformerFeatureMap) -> Result<(Tensor, Tensor)> {
    let mut g = Graph::new();
    let (qv, kv) = (g.constant(q.clone()), g.constant(k.clone()));
    let qp = fm.apply(&mut g, qv, Stabilizer::None)?;
    let kp = fm.apply(&mut g, kv, Stabilizer::None)?;
    Ok((g.value(qp).clone(), g.value(kp).clone()))
}

fn check_qkv(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<()> {
    if !q.is_matrix() || q.shape() != k.shape() || !v.is_matrix() || v.rows() != k.rows() {
        return Err(Error::shape(
            "attention",
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    Ok(())
}

/// Pretrained gene vectors matched against a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneEmbeddings {
    pub rows: Vec<(usize, Vec<f64>)>,
    pub unknown: usize,
}

/// Reads `symbol,v1,...,v_d` rows. A first row whose second field is not a
/// number is taken as a header.
pub fn parse_gene_embeddings<R: Read>(reader: R, vocab: &GeneVocabulary, dim: usize) -> Result<GeneEmbeddings> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut out = GeneEmbeddings {
        rows: Vec::new(),
        unknown: 0,
    };
    let mut seen = vec![false; vocab.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(crate::data::csv_error)?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && rec.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != dim + 1 {
            return Err(Error::parse(line, rec.len(), format!("expected {} fields, got {}", dim + 1, rec.len())));
        }
        let mut v = Vec::with_capacity(dim);
        for c in 1..=dim {
            let x: f64 = rec[c]
                .parse()
                .map_err(|_| Error::parse(line, c + 1, format!("not a number: {:?}", &rec[c])))?;
            if !x.is_finite() {
                return Err(Error::parse(line, c + 1, "non-finite value"));
            }
            v.push(x);
        }
        match vocab.index_of(&rec[0]) {
            Some(g) if seen[g] => {
                return Err(Error::parse(line, 1, format!("gene {:?} listed twice", &rec[0])));
            }
            Some(g) => {
                seen[g] = true;
                out.rows.push((g, v));
            }
            None => out.unknown += 1,
        }
    }
    Ok(out)
}

/// Overwrites gene-table rows with pretrained vectors; returns rows written.
pub fn apply_gene_embeddings(store: &mut ParamStore, enc: &Encoder, emb: &GeneEmbeddings) -> Result<usize> {
    let table = store.get_mut(enc.params.gene_table);
    let d = table.cols();
    for (g, v) in &emb.rows {
        if v.len() != d || *g >= table.rows() {
            return Err(Error::shape("apply_gene_embeddings", format!("row {} of width {}", g, v.len())));
        }
        table.row_mut(*g).copy_from_slice(v);
    }
    Ok(emb.rows.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    fn random(rows: usize, cols: usize, sd: f64, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| n.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn zero_queries_and_keys_average_values() {
        let q = Tensor::zeros(&[3, 2]);
        let v = random(3, 2, 1.0, 1);
        let (out, a) = exact_attention(&q, &q, &v).unwrap();
        for j in 0..2 {
            let mean = (v.get(0, j) + v.get(1, j) + v.get(2, j)) / 3.0;
            for i in 0..3 {
                assert!((out.get(i, j) - mean).abs() < 1e-15);
            }
        }
        assert!(a.data().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn single_token_returns_value() {
        let q = random(1, 4, 1.0, 2);
        let v = random(1, 4, 1.0, 3);
        let (out, a) = exact_attention(&q, &q, &v).unwrap();
        assert_eq!(a.data(), &[1.0]);
        assert_eq!(out, v);
    }

    #[test]
    fn exact_attention_matches_direct_formula() {
        let (q, k, v) = (random(3, 2, 1.0, 4), random(3, 2, 1.0, 5), random(3, 2, 1.0, 6));
        let (out, _) = exact_attention(&q, &k, &v).unwrap();
        for i in 0..3 {
            let s: Vec<f64> = (0..3)
                .map(|j| (q.get(i, 0) * k.get(j, 0) + q.get(i, 1) * k.get(j, 1)) / 2f64.sqrt())
                .collect();
            let z: f64 = s.iter().map(|x| x.exp()).sum();
            for c in 0..2 {
                let want: f64 = (0..3).map(|j| s[j].exp() / z * v.get(j, c)).sum();
                assert!((out.get(i, c) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn performer_with_zero_values_is_zero() {
        let fm = PerformerFeatureMap::new(4, 8, 1);
        let out = performer_attention(&random(5, 4, 1.0, 1), &random(5, 4, 1.0, 2), &Tensor::zeros(&[5, 4]), &fm).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn features_are_positive() {
        let fm = PerformerFeatureMap::new(4, 16, 9);
        let (qp, kp) = performer_features(&random(6, 4, 2.0, 1), &random(6, 4, 2.0, 2), &fm).unwrap();
        assert!(qp.data().iter().chain(kp.data()).all(|&x| x > 0.0));
    }

    #[test]
    fn zero_layers_return_embeddings() {
        let cfg = EncoderConfig {
            embed_dim: 4,
            layers: 0,
            heads: 2,
            ff_dim: 8,
            bin_count: 3,
            ..EncoderConfig::default()
        };
        let mut store = ParamStore::new();
        let enc = Encoder::new(cfg, 5, &mut store, &Initializer::new(0)).unwrap();
        let mut g = Graph::new();
        let mut bind = Binding::new(&store);
        let st = enc.forward(&mut g, &mut bind, &[0, 1, 2, 0, 1]).unwrap();
        assert_eq!(st.hidden.len(), 1);
        assert!(st.attention_sum.is_empty());
        assert!(enc.forward(&mut Graph::new(), &mut Binding::new(&store), &[0, 1, 3, 0, 1]).is_err());
    }

    #[test]
    fn embedding_csv_with_header_and_unknowns() {
        let vocab = GeneVocabulary::new(&["A", "B", "C"]).unwrap();
        let text = "symbol,x,y\nb,1,2\nzz,0,0\nA,3,4\n";
        let e = parse_gene_embeddings(text.as_bytes(), &vocab, 2).unwrap();
        assert_eq!(e.rows, vec![(1, vec![1.0, 2.0]), (0, vec![3.0, 4.0])]);
        assert_eq!(e.unknown, 1);
        assert!(parse_gene_embeddings("A,1\n".as_bytes(), &vocab, 2).is_err());
    }
}
