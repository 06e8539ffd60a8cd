//! Full-batch training with Adam and best-validation model selection.

use crate::autodiff::Adam;
use crate::data::{LabeledPair, Split};
use crate::error::{Error, Result};
use crate::metrics::{auprc, auroc, MetricsReport};
use crate::model::{Dataset, Model, ModelConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 100,
            learning_rate: 0.003,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::validation("iterations must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::validation(format!("learning rate {} is not a finite nonnegative number", self.learning_rate)));
        }
        Ok(())
    }
}

/// Metrics of the parameters used at the start of an iteration, before its
/// update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistoryRow {
    pub iteration: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
    pub val_auprc: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "iteration,train_loss,val_auroc,val_auprc";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.iteration, self.train_loss, self.val_auroc, self.val_auprc)
    }
}

/// How the retained parameters were chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    ValidationAuprc,
    /// Validation lacks a class; the lowest training loss wins instead.
    TrainingLoss,
}

pub struct TrainedModel {
    pub model: Model,
    pub history: Vec<HistoryRow>,
    pub best_iteration: usize,
    pub selection: Selection,
    pub config: TrainConfig,
}

impl TrainedModel {
    pub fn history_csv(&self, header_comment: Option<&str>) -> String {
        let mut s = String::new();
        if let Some(c) = header_comment {
            s.push_str(&format!("# {c}\n"));
        }
        s.push_str(HistoryRow::CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

fn both_classes(pairs: &[LabeledPair]) -> bool {
    pairs.iter().any(|p| p.label == 1) && pairs.iter().any(|p| p.label == 0)
}

pub fn train(data: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    let train_pairs = &data.splits.train;
    if train_pairs.is_empty() {
        return Err(Error::validation("training split is empty"));
    }
    let val_pairs = &data.splits.validation;
    let selection = if both_classes(val_pairs) {
        Selection::ValidationAuprc
    } else {
        log::warn!("validation split lacks a class; selecting parameters by training loss");
        Selection::TrainingLoss
    };
    let val_labels: Vec<u8> = val_pairs.iter().map(|p| p.label).collect();

    let mut model = Model::new(model_config, data.n_genes(), data.n_cells(), cfg.seed)?;
    let mut adam = Adam::new(cfg.learning_rate, &model.store)?;
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut best: Option<(f64, usize, crate::autodiff::ParamStore)> = None;
    for it in 0..cfg.iterations {
        let step = match model.loss_and_grads(data, train_pairs, val_pairs) {
            Err(Error::NonFinite(what)) => {
                log::error!("non-finite {what} at iteration {it}");
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    norms: model.store.norms_summary(),
                });
            }
            r => r?,
        };
        if !step.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: it,
                norms: model.store.norms_summary(),
            });
        }
        let (va, vp) = match selection {
            Selection::ValidationAuprc => (auroc(&step.eval_logits, &val_labels)?, auprc(&step.eval_logits, &val_labels)?),
            Selection::TrainingLoss => (f64::NAN, f64::NAN),
        };
        history.push(HistoryRow {
            iteration: it,
            train_loss: step.loss,
            val_auroc: va,
            val_auprc: vp,
        });
        let key = match selection {
            Selection::ValidationAuprc => vp,
            Selection::TrainingLoss => -step.loss,
        };
        if best.as_ref().map_or(true, |b| key > b.0) {
            best = Some((key, it, model.store.clone()));
        }
        if it % 10 == 0 || it + 1 == cfg.iterations {
            log::info!("iteration {it}: loss {:.5}, val AUROC {va:.4}, val AUPRC {vp:.4}", step.loss);
        }
        adam.step(&mut model.store, &step.grads)?;
    }
    let (_, best_iteration, store) = best.expect("at least one iteration");
    model.store = store;
    Ok(TrainedModel {
        model,
        history,
        best_iteration,
        selection,
        config: cfg.clone(),
    })
}

/// Scores every pair of a split with the frozen model and summarises it.
/// The splits are re-checked for overlap first, so a split that shares pairs
/// with another is rejected.
pub fn evaluate(model: &Model, data: &Dataset, split: Split, config_hash: &str) -> Result<MetricsReport> {
    data.splits.validate(&data.vocab)?;
    let pairs = data.splits.get(split);
    let channels = model.channel_outputs(data)?;
    let idx: Vec<(usize, usize)> = pairs.iter().map(|p| (p.tf, p.target)).collect();
    let scores = model.score_pairs(&channels, &idx)?;
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    MetricsReport::compute(split, &scores, &labels, config_hash)
}

/// Probabilities for explicit pairs. With `directed_only`, non-TF sources are
/// rejected.
pub fn predict_edges(model: &Model, data: &Dataset, pairs: &[(usize, usize)], directed_only: bool) -> Result<Vec<f64>> {
    if directed_only {
        if let Some(&(s, _)) = pairs.iter().find(|p| p.0 >= data.n_genes() || !data.vocab.is_tf(p.0)) {
            return Err(Error::contract(format!("source {s} is not a TF")));
        }
    }
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let channels = model.channel_outputs(data)?;
    model.score_pairs(&channels, pairs)
}

/// Every TF-to-other-gene pair, ranked by descending probability (ties by
/// index).
pub fn rank_all_pairs(scores_of: impl Fn(&[(usize, usize)]) -> Result<Vec<f64>>, tf_flags: &[bool]) -> Result<Vec<((usize, usize), f64)>> {
    let t = tf_flags.len();
    let pairs: Vec<(usize, usize)> = (0..t)
        .filter(|&s| tf_flags[s])
        .flat_map(|s| (0..t).filter(move |&g| g != s).map(move |g| (s, g)))
        .collect();
    let scores = scores_of(&pairs)?;
    let mut out: Vec<((usize, usize), f64)> = pairs.into_iter().zip(scores).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(out)
}
