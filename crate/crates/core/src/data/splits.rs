//! Train/validation/test construction for TF-to-gene pairs.
//!
//! Positives are the network's edges: two thirds go to training (a tenth of
//! those is held out for validation) and one third to test. Negatives come
//! from every TF-to-gene pair absent from the network. Training negatives are
//! drawn first, preferring "hard" negatives that share a TF with a training
//! positive; validation negatives next; test negatives last, from whatever
//! remains, so the test set never reuses a pair seen during training.

use std::collections::HashSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::expression::csv_error;
use super::network::PriorNetwork;
use super::vocab::GeneVocabulary;
use crate::error::{Error, Result};

pub const TRAIN_FRACTION: f64 = 2.0 / 3.0;
pub const VALIDATION_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplingPlan {
    pub network_density: f64,
    pub hard_negative_fraction: f64,
}

impl SamplingPlan {
    pub fn new(network_density: f64, hard_negative_fraction: f64) -> Result<Self> {
        if !(network_density > 0.0 && network_density < 1.0) {
            return Err(Error::validation(format!(
                "network density must lie in (0, 1), got {network_density}"
            )));
        }
        if !(0.0..=1.0).contains(&hard_negative_fraction) {
            return Err(Error::validation(format!(
                "hard-negative fraction must lie in [0, 1], got {hard_negative_fraction}"
            )));
        }
        Ok(SamplingPlan {
            network_density,
            hard_negative_fraction,
        })
    }

    /// Target positives / negatives.
    pub fn target_ratio(&self) -> f64 {
        self.network_density / (1.0 - self.network_density)
    }

    /// Negatives to pair with `positives`, rounded to the nearest count.
    pub fn negatives_for(&self, positives: usize) -> usize {
        (positives as f64 * (1.0 - self.network_density) / self.network_density).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s.trim().to_lowercase().as_str() {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabeledPair {
    pub tf: usize,
    pub target: usize,
    pub label: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSplits {
    pub train: Vec<LabeledPair>,
    pub validation: Vec<LabeledPair>,
    pub test: Vec<LabeledPair>,
    pub seed: u64,
}

impl LabeledSplits {
    pub fn get(&self, split: Split) -> &[LabeledPair] {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn counts(&self, split: Split) -> (usize, usize) {
        let pairs = self.get(split);
        let pos = pairs.iter().filter(|p| p.label == 1).count();
        (pos, pairs.len() - pos)
    }

    /// Achieved positives / negatives; infinite when a split has no negatives.
    pub fn achieved_ratio(&self, split: Split) -> f64 {
        let (p, n) = self.counts(split);
        p as f64 / n as f64
    }

    /// Training positives: the only edges visible to message passing.
    pub fn structure_pairs(&self) -> Vec<(usize, usize)> {
        self.train
            .iter()
            .filter(|p| p.label == 1)
            .map(|p| (p.tf, p.target))
            .collect()
    }

    /// Disjointness of the three splits, label sanity, and TF sources for
    /// positives.
    pub fn validate(&self, vocab: &GeneVocabulary) -> Result<()> {
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for split in Split::ALL {
            for p in self.get(split) {
                if p.tf >= vocab.len() || p.target >= vocab.len() {
                    return Err(Error::validation(format!("pair ({}, {}) outside vocabulary", p.tf, p.target)));
                }
                if p.label > 1 {
                    return Err(Error::validation(format!("label {} is not binary", p.label)));
                }
                if p.label == 1 && !vocab.is_tf(p.tf) {
                    return Err(Error::validation(format!(
                        "positive pair source {} is not a TF",
                        vocab.symbol(p.tf)
                    )));
                }
                if !seen.insert((p.tf, p.target)) {
                    return Err(Error::validation(format!(
                        "pair {} -> {} appears more than once across splits",
                        vocab.symbol(p.tf),
                        vocab.symbol(p.target)
                    )));
                }
            }
        }
        Ok(())
    }

    /// `tf,target,label,split` rows for the requested splits.
    pub fn to_csv(&self, vocab: &GeneVocabulary, which: &[Split], header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = header_comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str("tf,target,label,split\n");
        for &split in which {
            for p in self.get(split) {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    vocab.symbol(p.tf),
                    vocab.symbol(p.target),
                    p.label,
                    split.name()
                ));
            }
        }
        s
    }
}

/// Parses `tf,target,label,split` rows (header required). A comment line
/// containing `seed=<n>` sets the recorded seed.
pub fn parse_splits(text: &str, vocab: &GeneVocabulary) -> Result<LabeledSplits> {
    let seed = text
        .lines()
        .filter(|l| l.trim_start().starts_with('#'))
        .find_map(|l| {
            l.split(|c: char| c.is_whitespace() || c == ',')
                .find_map(|tok| tok.strip_prefix("seed="))
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::parse(1, 0, format!("missing column {name:?}")))
    };
    let (ci, ct, cl, cs) = (col("tf")?, col("target")?, col("label")?, col("split")?);
    let mut out = LabeledSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
    };
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| rec.get(c).ok_or_else(|| Error::parse(line, c + 1, "missing field"));
        let tf = vocab
            .index_of(field(ci)?)
            .ok_or_else(|| Error::parse(line, ci + 1, format!("unknown gene {:?}", &rec[ci])))?;
        let target = vocab
            .index_of(field(ct)?)
            .ok_or_else(|| Error::parse(line, ct + 1, format!("unknown gene {:?}", &rec[ct])))?;
        let label = match field(cl)? {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::parse(line, cl + 1, format!("label {other:?} is not 0 or 1"))),
        };
        let split = Split::parse(field(cs)?)
            .ok_or_else(|| Error::parse(line, cs + 1, format!("unknown split {:?}", &rec[cs])))?;
        let pair = LabeledPair { tf, target, label };
        match split {
            Split::Train => out.train.push(pair),
            Split::Validation => out.validation.push(pair),
            Split::Test => out.test.push(pair),
        }
    }
    Ok(out)
}

/// Unlabeled TF-to-gene pairs with O(1) removal, indexed globally and per TF.
struct FreePool {
    n_genes: usize,
    all: Vec<usize>,
    pos_all: Vec<usize>,
    by_tf: Vec<Vec<usize>>,
    pos_tf: Vec<usize>,
    tf_rank: Vec<usize>,
    tfs: Vec<usize>,
}

const ABSENT: usize = usize::MAX;

impl FreePool {
    fn new(vocab: &GeneVocabulary, net: &PriorNetwork) -> Self {
        let n = vocab.len();
        let tfs = vocab.tf_indices();
        let mut tf_rank = vec![ABSENT; n];
        for (r, &t) in tfs.iter().enumerate() {
            tf_rank[t] = r;
        }
        let mut pool = FreePool {
            n_genes: n,
            all: Vec::new(),
            pos_all: vec![ABSENT; tfs.len() * n],
            by_tf: vec![Vec::new(); tfs.len()],
            pos_tf: vec![ABSENT; tfs.len() * n],
            tf_rank,
            tfs,
        };
        for r in 0..pool.tfs.len() {
            let tf = pool.tfs[r];
            for g in 0..n {
                if g != tf && !net.contains(tf, g) {
                    let id = r * n + g;
                    pool.pos_all[id] = pool.all.len();
                    pool.all.push(id);
                    pool.pos_tf[id] = pool.by_tf[r].len();
                    pool.by_tf[r].push(id);
                }
            }
        }
        pool
    }

    fn len(&self) -> usize {
        self.all.len()
    }

    fn remove(&mut self, id: usize) {
        let p = self.pos_all[id];
        let last = *self.all.last().expect("nonempty");
        self.all.swap_remove(p);
        if last != id {
            self.pos_all[last] = p;
        }
        self.pos_all[id] = ABSENT;
        let r = id / self.n_genes;
        let p = self.pos_tf[id];
        let list = &mut self.by_tf[r];
        let last = *list.last().expect("nonempty");
        list.swap_remove(p);
        if last != id {
            self.pos_tf[last] = p;
        }
        self.pos_tf[id] = ABSENT;
    }

    fn pair(&self, id: usize) -> (usize, usize) {
        (self.tfs[id / self.n_genes], id % self.n_genes)
    }

    fn take_uniform(&mut self, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        if self.all.is_empty() {
            return None;
        }
        let id = self.all[rng.gen_range(0..self.all.len())];
        self.remove(id);
        Some(self.pair(id))
    }

    fn take_for_tf(&mut self, tf: usize, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        let r = self.tf_rank[tf];
        if r == ABSENT || self.by_tf[r].is_empty() {
            return None;
        }
        let list = &self.by_tf[r];
        let id = list[rng.gen_range(0..list.len())];
        self.remove(id);
        Some(self.pair(id))
    }
}

fn negative(p: (usize, usize)) -> LabeledPair {
    LabeledPair {
        tf: p.0,
        target: p.1,
        label: 0,
    }
}

pub fn make_splits(
    net: &PriorNetwork,
    vocab: &GeneVocabulary,
    plan: &SamplingPlan,
    seed: u64,
) -> Result<LabeledSplits> {
    vocab.require_tf()?;
    if net.is_empty() {
        return Err(Error::validation("cannot split an empty network"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positives = net.pairs();
    positives.shuffle(&mut rng);
    let total = positives.len();
    let n_trainval = (total as f64 * TRAIN_FRACTION).round() as usize;
    let n_val = (n_trainval as f64 * VALIDATION_FRACTION).round() as usize;
    let n_train = n_trainval - n_val;
    let n_test = total - n_trainval;

    let need_train = plan.negatives_for(n_train);
    let need_val = plan.negatives_for(n_val);
    let need_test = plan.negatives_for(n_test);
    let mut pool = FreePool::new(vocab, net);
    let needed = need_train + need_val + need_test;
    if pool.len() < needed {
        return Err(Error::InsufficientNegatives {
            needed,
            available: pool.len(),
            deficit: needed - pool.len(),
        });
    }

    let to_pos = |&(tf, target): &(usize, usize)| LabeledPair { tf, target, label: 1 };
    let train_pos: Vec<LabeledPair> = positives[..n_train].iter().map(to_pos).collect();
    let val_pos: Vec<LabeledPair> = positives[n_train..n_trainval].iter().map(to_pos).collect();
    let test_pos: Vec<LabeledPair> = positives[n_trainval..].iter().map(to_pos).collect();

    let mut train = train_pos.clone();
    let n_hard = (need_train as f64 * plan.hard_negative_fraction).round() as usize;
    for k in 0..need_train {
        let hard = if k < n_hard && !train_pos.is_empty() {
            pool.take_for_tf(train_pos[k % train_pos.len()].tf, &mut rng)
        } else {
            None
        };
        let pick = match hard {
            Some(p) => p,
            None => pool.take_uniform(&mut rng).expect("pool size checked"),
        };
        train.push(negative(pick));
    }
    let mut validation = val_pos;
    for _ in 0..need_val {
        validation.push(negative(pool.take_uniform(&mut rng).expect("pool size checked")));
    }
    let mut test = test_pos;
    for _ in 0..need_test {
        test.push(negative(pool.take_uniform(&mut rng).expect("pool size checked")));
    }
    for s in [&mut train, &mut validation, &mut test] {
        s.sort_by_key(|p| (p.tf, p.target));
    }
    Ok(LabeledSplits {
        train,
        validation,
        test,
        seed,
    })
}
