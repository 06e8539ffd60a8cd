//! Per-gene importance scores from attention and score-weighted pooling of
//! per-cell gene embeddings into one gene matrix.

use crate::autodiff::{Graph, Var};
use crate::data::GeneVocabulary;
use crate::error::{Error, Result};
use crate::tensor::{gemm, MatView, OutView, Tensor};

/// Elementwise mean of equally shaped square matrices.
pub fn average_attention(matrices: &[Tensor]) -> Result<Tensor> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::contract("no attention matrices to average"))?;
    if !first.is_matrix() || first.rows() != first.cols() {
        return Err(Error::shape("average_attention", format!("{:?} is not square", first.shape())));
    }
    let mut acc = Tensor::zeros(first.shape());
    for m in matrices {
        if m.shape() != first.shape() {
            return Err(Error::shape(
                "average_attention",
                format!("{:?} vs {:?}", m.shape(), first.shape()),
            ));
        }
        for (a, v) in acc.data_mut().iter_mut().zip(m.data()) {
            *a += v;
        }
    }
    let k = matrices.len() as f64;
    acc.data_mut().iter_mut().for_each(|a| *a /= k);
    Ok(acc)
}

/// Column sums: attention received by each gene.
pub fn attention_sum(a: &Tensor) -> Result<Vec<f64>> {
    if !a.is_matrix() || a.rows() != a.cols() {
        return Err(Error::shape("attention_sum", format!("{:?} is not square", a.shape())));
    }
    let t = a.cols();
    let mut out = vec![0.0; t];
    for i in 0..a.rows() {
        for (o, v) in out.iter_mut().zip(a.row(i)) {
            *o += v;
        }
    }
    Ok(out)
}

/// Column sums of the implied kernel attention `diag(1/(Q'K'^T 1)) Q'K'^T`
/// without materialising it: `a = K' (Q'^T w)` with `w = 1 / (Q'(K'^T 1))`.
pub fn attention_sum_linear(qp: &Tensor, kp: &Tensor) -> Result<Vec<f64>> {
    if !qp.is_matrix() || !kp.is_matrix() || qp.cols() != kp.cols() || qp.rows() != kp.rows() {
        return Err(Error::shape(
            "attention_sum_linear",
            format!("{:?} vs {:?}", qp.shape(), kp.shape()),
        ));
    }
    let (t, m) = (qp.rows(), qp.cols());
    let mut ksum = vec![0.0; m];
    for j in 0..t {
        for (s, v) in ksum.iter_mut().zip(kp.row(j)) {
            *s += v;
        }
    }
    let w: Vec<f64> = (0..t)
        .map(|i| {
            let d: f64 = qp.row(i).iter().zip(&ksum).map(|(a, b)| a * b).sum();
            1.0 / d
        })
        .collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("kernel attention normaliser".into()));
    }
    if w.iter().any(|v| *v <= 0.0) {
        return Err(Error::contract("kernel attention normaliser is not positive"));
    }
    let mut u = vec![0.0; m];
    gemm(
        MatView::new(qp.data(), t, m, false).t(),
        MatView::new(&w, t, 1, false),
        OutView::new(&mut u, m, 1, false),
        false,
    );
    let mut a = vec![0.0; t];
    gemm(
        MatView::new(kp.data(), t, m, false),
        MatView::new(&u, m, 1, false),
        OutView::new(&mut a, t, 1, false),
        false,
    );
    Ok(a)
}

/// Normalises each gene's column of an `N x T` stack of attention sums so it
/// sums to 1 over cells. Columns summing to zero fall back to `1/N`.
pub fn normalize_scores(sums: &Tensor) -> Result<Tensor> {
    if !sums.is_matrix() || sums.rows() == 0 {
        return Err(Error::contract("need at least one cell of attention sums"));
    }
    let (n, t) = (sums.rows(), sums.cols());
    let mut total = vec![0.0; t];
    for c in 0..n {
        for (s, v) in total.iter_mut().zip(sums.row(c)) {
            *s += v;
        }
    }
    let mut out = Tensor::zeros(&[n, t]);
    for c in 0..n {
        let row = out.row_mut(c);
        for j in 0..t {
            row[j] = if total[j] > 0.0 {
                sums.get(c, j) / total[j]
            } else {
                1.0 / n as f64
            };
        }
    }
    Ok(out)
}

/// The `N x T` matrix of `1/N`: score-free average pooling.
pub fn uniform_scores(n_cells: usize, n_genes: usize) -> Tensor {
    Tensor::full(&[n_cells, n_genes], 1.0 / n_cells as f64)
}

/// `Z[t] = sum_n scores[n, t] * H_n[t]`, recorded on the tape. Scores are
/// constants; gradients reach the hidden states only.
pub fn pool_genes(g: &mut Graph, hidden: &[Var], scores: &Tensor) -> Result<Var> {
    check_scores(hidden.len(), scores)?;
    let mut parts = Vec::with_capacity(hidden.len());
    for (c, &h) in hidden.iter().enumerate() {
        let w = g.constant(Tensor::matrix(scores.cols(), 1, scores.row(c).to_vec())?);
        parts.push(g.scale_rows(h, w)?);
    }
    g.add_n(&parts)
}

/// Plain-value version of [`pool_genes`], accumulating in cell order.
pub fn pool_genes_values(hidden: &[Tensor], scores: &Tensor) -> Result<Tensor> {
    check_scores(hidden.len(), scores)?;
    let first = &hidden[0];
    let (t, d) = (first.rows(), first.cols());
    let mut z = Tensor::zeros(&[t, d]);
    for (c, h) in hidden.iter().enumerate() {
        if h.shape() != [t, d] || t != scores.cols() {
            return Err(Error::shape("pool_genes", format!("{:?} with scores {:?}", h.shape(), scores.shape())));
        }
        for i in 0..t {
            let s = scores.get(c, i);
            for (zv, hv) in z.row_mut(i).iter_mut().zip(h.row(i)) {
                *zv += s * hv;
            }
        }
    }
    Ok(z)
}

fn check_scores(n_cells: usize, scores: &Tensor) -> Result<()> {
    if n_cells == 0 {
        return Err(Error::contract("pooling over zero cells"));
    }
    if !scores.is_matrix() || scores.rows() != n_cells {
        return Err(Error::shape(
            "pool_genes",
            format!("{} cells with scores {:?}", n_cells, scores.shape()),
        ));
    }
    Ok(())
}

/// Per-cell attention sums and their cross-cell normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSummary {
    pub sums: Tensor,
    pub scores: Tensor,
}

impl AttentionSummary {
    pub fn from_sums(sums: Tensor) -> Result<Self> {
        let scores = normalize_scores(&sums)?;
        Ok(AttentionSummary { sums, scores })
    }

    /// `gene,cell,score` rows.
    pub fn scores_csv(&self, vocab: &GeneVocabulary, cell_ids: &[String], header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = header_comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("gene,cell,score\n");
        for t in 0..self.scores.cols() {
            for (c, id) in cell_ids.iter().enumerate().take(self.scores.rows()) {
                s.push_str(&format!("{},{},{}\n", vocab.symbol(t), id, self.scores.get(c, t)));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_identity_average() {
        let t = 3;
        let u = Tensor::full(&[t, t], 1.0 / t as f64);
        let avg = average_attention(&[u, Tensor::eye(t)]).unwrap();
        for i in 0..t {
            for j in 0..t {
                let d = if i == j { 1.0 } else { 0.0 };
                assert!((avg.get(i, j) - (1.0 / 3.0 + d) / 2.0).abs() < 1e-15);
            }
        }
        assert!(average_attention(&[]).is_err());
    }

    #[test]
    fn column_of_ones_collects_all_attention() {
        let mut a = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            a.set(i, 2, 1.0);
        }
        assert_eq!(attention_sum(&a).unwrap(), vec![0.0, 0.0, 4.0, 0.0]);
        assert_eq!(attention_sum(&Tensor::eye(4)).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn normalisation_examples() {
        let s = normalize_scores(&Tensor::matrix(2, 2, vec![1.0, 0.0, 3.0, 0.0]).unwrap()).unwrap();
        assert_eq!(s.data(), &[0.25, 0.5, 0.75, 0.5]);
        let one = normalize_scores(&Tensor::matrix(1, 3, vec![2.0, 5.0, 0.1]).unwrap()).unwrap();
        assert_eq!(one.data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn weighted_pool_hand_case() {
        let h1 = Tensor::matrix(1, 2, vec![4.0, -8.0]).unwrap();
        let h2 = Tensor::matrix(1, 2, vec![0.0, 4.0]).unwrap();
        let scores = Tensor::matrix(2, 1, vec![0.25, 0.75]).unwrap();
        let z = pool_genes_values(&[h1.clone(), h2.clone()], &scores).unwrap();
        assert_eq!(z.data(), &[1.0, 1.0]);
        let mut g = Graph::new();
        let v1 = g.constant(h1);
        let v2 = g.constant(h2);
        let zg = pool_genes(&mut g, &[v1, v2], &scores).unwrap();
        assert_eq!(g.value(zg), &z);
    }

    #[test]
    fn uniform_kernel_features_give_unit_sums() {
        let f = Tensor::full(&[5, 3], 0.7);
        let a = attention_sum_linear(&f, &f).unwrap();
        for v in a {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
