use grnlink_core::data::{GeneVocabulary, PriorNetwork};
use grnlink_core::encoder::{performer_attention, PerformerFeatureMap};
use grnlink_core::Tensor;
use rand::Rng;

use super::{normal_matrix, rng};

/// Direct row-by-row softmax attention.
pub fn softmax_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (t, d) = (q.rows(), q.cols());
    let mut out = Tensor::zeros(&[t, v.cols()]);
    for i in 0..t {
        let logits: Vec<f64> = (0..t)
            .map(|j| (0..d).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
        let z: f64 = w.iter().sum();
        for j in 0..t {
            for c in 0..v.cols() {
                let cur = out.get(i, c);
                out.set(i, c, cur + w[j] / z * v.get(j, c));
            }
        }
    }
    out
}

/// Mean absolute error of the kernel approximation on T=32, d=16 inputs,
/// averaged over `seeds` independent draws.
pub fn mean_performer_error(m: usize, seeds: u64) -> f64 {
    let mut total = 0.0;
    for s in 0..seeds {
        let mut r = rng(1000 + s);
        let q = normal_matrix(&mut r, 32, 16, 0.5);
        let k = normal_matrix(&mut r, 32, 16, 0.5);
        let v = normal_matrix(&mut r, 32, 16, 0.5);
        let fm = PerformerFeatureMap::new(16, m, 5000 + s);
        let approx = performer_attention(&q, &k, &v, &fm).unwrap();
        total += approx.mean_abs_diff(&softmax_attention(&q, &k, &v));
    }
    total / seeds as f64
}

/// Column sums of `diag(1 / (Q'K'^T 1)) Q'K'^T`, formed explicitly.
pub fn materialized_attention_sum(qp: &Tensor, kp: &Tensor) -> Vec<f64> {
    let s = qp.matmul(&kp.transpose()).unwrap();
    let t = s.rows();
    let mut out = vec![0.0; t];
    for i in 0..t {
        let d: f64 = s.row(i).iter().sum();
        for j in 0..t {
            out[j] += s.get(i, j) / d;
        }
    }
    out
}

pub fn auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut ties, mut pairs) = (0.0, 0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    ties += 1.0;
                }
            }
        }
    }
    (wins + 0.5 * ties) / pairs
}

/// Integrates the precision step curve over recall, one step per distinct
/// threshold, recounting everything at or above each threshold.
pub fn auprc(scores: &[f64], labels: &[u8]) -> f64 {
    let p = labels.iter().filter(|&&l| l == 1).count() as f64;
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    for t in thresholds {
        let tp = scores.iter().zip(labels).filter(|(s, l)| **s >= t && **l == 1).count() as f64;
        let k = scores.iter().filter(|s| **s >= t).count() as f64;
        let recall = tp / p;
        area += (recall - prev_recall) * (tp / k);
        prev_recall = recall;
    }
    area
}

/// Calls `f` on every multiset of up to `max_n` (score, label) items drawn
/// from the grid; metrics ignore order so multisets cover all inputs.
pub fn for_each_multiset(max_n: usize, f: &mut impl FnMut(&[f64], &[u8])) {
    let items: Vec<(f64, u8)> = (1..=9)
        .flat_map(|k| [(k as f64 / 10.0, 0u8), (k as f64 / 10.0, 1u8)])
        .collect();
    fn rec(
        items: &[(f64, u8)],
        start: usize,
        max_n: usize,
        s: &mut Vec<f64>,
        l: &mut Vec<u8>,
        f: &mut impl FnMut(&[f64], &[u8]),
    ) {
        if !s.is_empty() {
            f(s, l);
        }
        if s.len() == max_n {
            return;
        }
        for i in start..items.len() {
            s.push(items[i].0);
            l.push(items[i].1);
            rec(items, i, max_n, s, l, f);
            s.pop();
            l.pop();
        }
    }
    rec(&items, 0, max_n, &mut Vec::new(), &mut Vec::new(), f);
}

/// The first `n_tfs` genes are TFs; each TF-to-other pair is an edge with
/// probability `p`. `None` when no edge was drawn.
pub fn toy_network(seed: u64, n_genes: usize, n_tfs: usize, p: f64) -> Option<(GeneVocabulary, PriorNetwork)> {
    let mut r = rng(seed);
    let names: Vec<String> = (0..n_genes).map(|i| format!("G{i}")).collect();
    let mut vocab = GeneVocabulary::new(&names).unwrap();
    for i in 0..n_tfs {
        vocab.set_tf(i);
    }
    let pairs: Vec<(usize, usize)> = (0..n_tfs)
        .flat_map(|s| (0..n_genes).filter(move |&t| t != s).map(move |t| (s, t)))
        .filter(|_| r.gen::<f64>() < p)
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let net = PriorNetwork::from_pairs(&pairs, &vocab).unwrap();
    Some((vocab, net))
}
