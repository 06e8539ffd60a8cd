use std::io::Read;
use std::path::Path;

use super::vocab::GeneVocabulary;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Layout of an expression CSV on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Orientation {
    /// One row per cell, one column per gene.
    CellsAsRows,
    /// One row per gene, one column per cell.
    GenesAsRows,
    /// Decided from the header's corner cell: empty or a gene-like label
    /// (`gene`, `genes`, `symbol`, `gene_id`) means genes-as-rows, anything
    /// else cells-as-rows.
    Auto,
}

/// Raw counts, `cells x genes`.
#[derive(Clone, Debug)]
pub struct ExpressionMatrix {
    pub counts: Tensor,
    pub vocab: GeneVocabulary,
    pub cell_ids: Vec<String>,
}

impl ExpressionMatrix {
    pub fn new(counts: Tensor, vocab: GeneVocabulary, cell_ids: Vec<String>) -> Result<Self> {
        if !counts.is_matrix() || counts.cols() != vocab.len() || counts.rows() != cell_ids.len() {
            return Err(Error::validation(format!(
                "count matrix {:?} does not match {} cells x {} genes",
                counts.shape(),
                cell_ids.len(),
                vocab.len()
            )));
        }
        for (k, &v) in counts.data().iter().enumerate() {
            if !(v >= 0.0) || !v.is_finite() {
                let c = counts.cols();
                return Err(Error::validation(format!(
                    "invalid count {v} at cell {}, gene {}",
                    k / c,
                    k % c
                )));
            }
        }
        Ok(ExpressionMatrix {
            counts,
            vocab,
            cell_ids,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.counts.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.counts.cols()
    }

    pub fn get(&self, cell: usize, gene: usize) -> f64 {
        self.counts.get(cell, gene)
    }

    /// Writes cells-as-rows CSV with a `cell` corner label.
    pub fn to_csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = header_comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("cell");
        for g in self.vocab.symbols() {
            s.push(',');
            s.push_str(g);
        }
        s.push('\n');
        for (i, id) in self.cell_ids.iter().enumerate() {
            s.push_str(id);
            for v in self.counts.row(i) {
                s.push(',');
                s.push_str(&format!("{v}"));
            }
            s.push('\n');
        }
        s
    }
}

fn is_gene_corner(label: &str) -> bool {
    matches!(
        label.trim().to_lowercase().as_str(),
        "" | "gene" | "genes" | "symbol" | "gene_id" | "geneid" | "gene_symbol"
    )
}

pub fn load_expression(path: &Path, orientation: Orientation) -> Result<ExpressionMatrix> {
    let file = std::fs::File::open(path)?;
    parse_expression(file, orientation)
}

/// Parses an expression CSV. Coordinates in errors are 1-based line and
/// column numbers of the source text.
pub fn parse_expression<R: Read>(reader: R, orientation: Orientation) -> Result<ExpressionMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::validation("expression file is empty")),
    };
    let header_line = header.position().map_or(1, |p| p.line() as usize);
    if header.len() < 2 {
        return Err(Error::parse(header_line, 1, "header needs an identifier column and at least one data column"));
    }
    let orientation = match orientation {
        Orientation::Auto => {
            if is_gene_corner(&header[0]) {
                Orientation::GenesAsRows
            } else {
                Orientation::CellsAsRows
            }
        }
        o => o,
    };
    let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = col_ids.len();
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width + 1 {
            return Err(Error::parse(
                line,
                rec.len().min(width + 1),
                format!("expected {} fields, found {}", width + 1, rec.len()),
            ));
        }
        row_ids.push(rec[0].to_string());
        for (j, field) in rec.iter().enumerate().skip(1) {
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(line, j + 1, format!("non-numeric value {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(line, j + 1, format!("non-finite value {field:?}")));
            }
            if v < 0.0 {
                return Err(Error::parse(line, j + 1, format!("negative count {v}")));
            }
            values.push(v);
        }
    }
    if row_ids.is_empty() {
        return Err(Error::validation("expression file has no data rows"));
    }
    let (genes, cells, counts) = match orientation {
        Orientation::CellsAsRows => {
            let t = Tensor::matrix(row_ids.len(), width, values)?;
            (col_ids, row_ids, t)
        }
        _ => {
            let t = Tensor::matrix(row_ids.len(), width, values)?.transpose();
            (row_ids, col_ids, t)
        }
    };
    let vocab = GeneVocabulary::new(&genes)?;
    ExpressionMatrix::new(counts, vocab, cells)
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => Error::parse(line, err.field() + 1, "invalid UTF-8"),
        other => Error::parse(line, 0, format!("{other:?}")),
    }
}
