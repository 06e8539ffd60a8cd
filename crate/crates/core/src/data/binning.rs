use super::expression::ExpressionMatrix;
use crate::error::{Error, Result};

/// Discretised expression: bin 0 holds zero counts, bins `1..bin_count`
/// split the `ln(1 + count)` range of nonzero entries into equal widths.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedMatrix {
    bins: Vec<usize>,
    n_cells: usize,
    n_genes: usize,
    pub bin_count: usize,
    pub log_transformed: bool,
    /// `bin_count` edges from the minimum to the maximum transformed
    /// nonzero value; bin `k >= 1` covers `[edges[k-1], edges[k])`, the last
    /// bin is closed.
    pub edges: Vec<f64>,
}

impl BinnedMatrix {
    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn get(&self, cell: usize, gene: usize) -> usize {
        self.bins[cell * self.n_genes + gene]
    }

    pub fn cell(&self, cell: usize) -> &[usize] {
        &self.bins[cell * self.n_genes..(cell + 1) * self.n_genes]
    }

    /// Bin of a single raw count under this matrix's edges.
    pub fn assign(&self, count: f64) -> usize {
        assign_bin(count, &self.edges, self.bin_count)
    }
}

fn assign_bin(count: f64, edges: &[f64], bin_count: usize) -> usize {
    if count <= 0.0 {
        return 0;
    }
    let v = count.ln_1p();
    let lo = edges[0];
    let hi = edges[edges.len() - 1];
    if hi <= lo {
        return 1;
    }
    let width = (hi - lo) / (bin_count - 1) as f64;
    let k = ((v - lo) / width).floor();
    let k = if k.is_finite() && k > 0.0 { k as usize } else { 0 };
    1 + k.min(bin_count - 2)
}

pub fn bin_expression(x: &ExpressionMatrix, bin_count: usize) -> Result<BinnedMatrix> {
    if bin_count < 2 {
        return Err(Error::validation(format!("bin count must be at least 2, got {bin_count}")));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in x.counts.data() {
        if c > 0.0 {
            let v = c.ln_1p();
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return Err(Error::validation("expression matrix has no nonzero counts"));
    }
    let edges: Vec<f64> = (0..bin_count)
        .map(|k| {
            if k + 1 == bin_count {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (bin_count - 1) as f64
            }
        })
        .collect();
    let bins = x
        .counts
        .data()
        .iter()
        .map(|&c| assign_bin(c, &edges, bin_count))
        .collect();
    Ok(BinnedMatrix {
        bins,
        n_cells: x.n_cells(),
        n_genes: x.n_genes(),
        bin_count,
        log_transformed: true,
        edges,
    })
}
