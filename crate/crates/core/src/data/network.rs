use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use super::expression::csv_error;
use super::vocab::GeneVocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeType {
    Tf = 0,
    Gene = 1,
}

impl NodeType {
    pub const COUNT: usize = 2;

    pub fn id(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    /// TF to target, as listed in the network.
    Regulates = 0,
    /// Target back to its TF.
    Reverse = 1,
    /// Node to itself.
    SelfLoop = 2,
}

impl Relation {
    pub const COUNT: usize = 3;

    pub fn id(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub tf: usize,
    pub target: usize,
    pub relation: Relation,
}

/// Directed regulatory edges over a vocabulary, sorted by `(tf, target)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorNetwork {
    edges: Vec<Edge>,
    node_types: Vec<NodeType>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NetworkLoadReport {
    pub rows_read: usize,
    pub kept: usize,
    pub dropped_unknown: usize,
    pub dropped_self_loops: usize,
    pub duplicates: usize,
    pub header_skipped: bool,
}

impl PriorNetwork {
    /// Builds a network from `(tf, target)` index pairs. Sources must be
    /// flagged as TFs in `vocab`; duplicates are merged.
    pub fn from_pairs(pairs: &[(usize, usize)], vocab: &GeneVocabulary) -> Result<Self> {
        let mut set = BTreeSet::new();
        for &(s, t) in pairs {
            if s >= vocab.len() || t >= vocab.len() {
                return Err(Error::validation(format!(
                    "edge ({s}, {t}) outside a vocabulary of {} genes",
                    vocab.len()
                )));
            }
            if !vocab.is_tf(s) {
                return Err(Error::validation(format!(
                    "edge source {} is not a transcription factor",
                    vocab.symbol(s)
                )));
            }
            if s == t {
                return Err(Error::validation(format!("self edge on {}", vocab.symbol(s))));
            }
            set.insert((s, t));
        }
        Ok(PriorNetwork {
            edges: set
                .into_iter()
                .map(|(tf, target)| Edge {
                    tf,
                    target,
                    relation: Relation::Regulates,
                })
                .collect(),
            node_types: node_types(vocab),
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn contains(&self, tf: usize, target: usize) -> bool {
        self.edges
            .binary_search_by(|e| (e.tf, e.target).cmp(&(tf, target)))
            .is_ok()
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.edges.iter().map(|e| (e.tf, e.target)).collect()
    }

    pub fn to_csv(&self, vocab: &GeneVocabulary, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = header_comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("TF,target\n");
        for e in &self.edges {
            s.push_str(&format!("{},{}\n", vocab.symbol(e.tf), vocab.symbol(e.target)));
        }
        s
    }
}

pub fn node_types(vocab: &GeneVocabulary) -> Vec<NodeType> {
    vocab
        .tf_flags()
        .iter()
        .map(|&tf| if tf { NodeType::Tf } else { NodeType::Gene })
        .collect()
}

pub fn load_network(path: &Path, vocab: &mut GeneVocabulary) -> Result<(PriorNetwork, NetworkLoadReport)> {
    let file = std::fs::File::open(path)?;
    parse_network(file, vocab)
}

/// Parses `TF,target` rows. The first row is taken as a header when neither
/// field names a gene in the vocabulary. Extra columns are ignored. Rows with
/// unknown genes or self loops are dropped and counted; every kept source is
/// flagged as a TF in `vocab`.
pub fn parse_network<R: Read>(reader: R, vocab: &mut GeneVocabulary) -> Result<(PriorNetwork, NetworkLoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut report = NetworkLoadReport::default();
    let mut pairs = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::parse(line, 1, "expected at least two fields (TF, target)"));
        }
        let (s, t) = (vocab.index_of(&rec[0]), vocab.index_of(&rec[1]));
        if k == 0 && s.is_none() && t.is_none() {
            report.header_skipped = true;
            continue;
        }
        report.rows_read += 1;
        match (s, t) {
            (Some(s), Some(t)) if s == t => report.dropped_self_loops += 1,
            (Some(s), Some(t)) => pairs.push((s, t)),
            _ => report.dropped_unknown += 1,
        }
    }
    for &(s, _) in &pairs {
        vocab.set_tf(s);
    }
    let net = PriorNetwork::from_pairs(&pairs, vocab)?;
    report.kept = net.len();
    report.duplicates = pairs.len() - net.len();
    if net.is_empty() {
        return Err(Error::validation(format!(
            "network has no usable edges ({} rows read, {} with unknown genes)",
            report.rows_read, report.dropped_unknown
        )));
    }
    Ok((net, report))
}

/// `|E| / (|TF| * (T - 1))`: edges over all TF-to-other-gene candidates.
pub fn network_density(net: &PriorNetwork, vocab: &GeneVocabulary) -> Result<f64> {
    let tfs = vocab.n_tfs();
    if net.is_empty() || tfs == 0 || vocab.len() < 2 {
        return Err(Error::validation("density of an empty network"));
    }
    Ok(net.len() as f64 / (tfs * (vocab.len() - 1)) as f64)
}
