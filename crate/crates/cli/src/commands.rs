use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use grnlink_core::checkpoint::Checkpoint;
use grnlink_core::config::{format_key_values, parse_key_values};
use grnlink_core::data::{
    load_expression, load_network, make_splits, network_density, parse_splits, parse_tf_list, synth_generate,
    ExpressionMatrix, GeneVocabulary, LabeledSplits, Orientation, SamplingPlan, Split, SynthConfig,
};
use grnlink_core::model::{Dataset, Model, ModelConfig, Variant};
use grnlink_core::pooling::AttentionSummary;
use grnlink_core::train::{evaluate, rank_all_pairs, train, TrainedModel};
use grnlink_core::metrics::MetricsReport;

use crate::error::{with_path, CliError, CliResult};
use crate::settings::{config_hash, header, ConfigFlags, Settings};

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with a planted regulatory network.
    Synth(SynthArgs),
    /// Build leakage-free train/validation/test pair splits.
    Prepare(PrepareArgs),
    /// Train a model on prepared splits.
    Train(TrainArgs),
    /// Score one split with a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Train the full model and the three ablations with one seed.
    Ablate(AblateArgs),
    /// Score TF-target pairs from a checkpoint.
    Predict(PredictArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OrientationArg {
    Auto,
    Cells,
    Genes,
}

impl OrientationArg {
    fn to_core(self) -> Orientation {
        match self {
            OrientationArg::Auto => Orientation::Auto,
            OrientationArg::Cells => Orientation::CellsAsRows,
            OrientationArg::Genes => Orientation::GenesAsRows,
        }
    }

    fn name(self) -> &'static str {
        match self {
            OrientationArg::Auto => "auto",
            OrientationArg::Cells => "cells",
            OrientationArg::Genes => "genes",
        }
    }

    fn parse(s: &str) -> CliResult<Self> {
        <Self as ValueEnum>::from_str(s, true).map_err(|_| CliError::input(format!("unknown orientation {s:?}")))
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub genes: usize,
    #[arg(long, default_value_t = 20)]
    pub tfs: usize,
    #[arg(long, default_value_t = 150)]
    pub cells: usize,
    #[arg(long, default_value_t = 0.05)]
    pub edge_prob: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise_sd: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(long)]
    pub expression: PathBuf,
    #[arg(long)]
    pub network: PathBuf,
    /// Optional list of TF symbols, one per line.
    #[arg(long)]
    pub tfs: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OrientationArg::Auto)]
    pub orientation: OrientationArg,
    /// Overrides the density measured from the network.
    #[arg(long)]
    pub density: Option<f64>,
    #[arg(long)]
    pub hard_negative_fraction: Option<f64>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    /// Expression file; defaults to the one recorded by `prepare`.
    #[arg(long)]
    pub expression: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Also write per-cell attention scores.
    #[arg(long)]
    pub dump_scores: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub expression: Option<PathBuf>,
    /// `train`, `validation` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub expression: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV of `tf,target` symbols to score.
    #[arg(long, conflicts_with = "all", required_unless_present = "all")]
    pub pairs: Option<PathBuf>,
    /// Score every TF-to-other-gene pair.
    #[arg(long)]
    pub all: bool,
    /// Accept pairs whose source is not a TF.
    #[arg(long)]
    pub allow_non_tf: bool,
    /// Number of top edges in the DOT export.
    #[arg(long, default_value_t = 50)]
    pub top_k: usize,
    /// Write the top-k predicted subnetwork as a DOT graph.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::Prepare(a) => cmd_prepare(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Predict(a) => cmd_predict(&a),
    }
}

/// Messages echoed to the log and kept for the run directory.
#[derive(Default)]
struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    fn note(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::info!("{msg}");
        self.lines.push(msg);
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        write_file(&dir.join("run.log"), &(self.lines.join("\n") + "\n"))
    }
}

fn require_file(path: &Path) -> CliResult<()> {
    if !path.is_file() {
        return Err(CliError::input(format!("input file not found: {}", path.display())));
    }
    Ok(())
}

fn require_dir(path: &Path) -> CliResult<()> {
    if !path.is_dir() {
        return Err(CliError::input(format!("directory not found: {}", path.display())));
    }
    Ok(())
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig::new(a.genes, a.tfs, a.cells, a.edge_prob, a.noise_sd, a.seed);
    let canonical = format!(
        "synth.genes={}\nsynth.tfs={}\nsynth.cells={}\nsynth.edge_prob={}\nsynth.noise_sd={}\nseed={}\n",
        a.genes, a.tfs, a.cells, a.edge_prob, a.noise_sd, a.seed
    );
    let hash = config_hash(&canonical);
    let head = header(a.seed, &hash);
    let (expr, net) = synth_generate(&cfg)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("expression.csv"), &expr.to_csv(Some(&head)))?;
    write_file(&a.out.join("network.csv"), &net.to_csv(&expr.vocab, Some(&head)))?;
    let mut tfs = format!("# {head}\ntf\n");
    for i in expr.vocab.tf_indices() {
        tfs.push_str(expr.vocab.symbol(i));
        tfs.push('\n');
    }
    write_file(&a.out.join("tfs.csv"), &tfs)?;
    write_file(&a.out.join("config.txt"), &format!("# {head}\n{canonical}"))?;
    println!(
        "synthetic dataset: {} cells x {} genes, {} TFs, {} planted edges -> {}",
        expr.n_cells(),
        expr.n_genes(),
        expr.vocab.n_tfs(),
        net.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_prepare(a: &PrepareArgs) -> CliResult<()> {
    require_file(&a.expression)?;
    require_file(&a.network)?;
    if let Some(t) = &a.tfs {
        require_file(t)?;
    }
    let mut settings = a.flags.resolve()?;
    if let Some(d) = a.density {
        settings.set("sampling.density", &d.to_string())?;
    }
    if let Some(h) = a.hard_negative_fraction {
        settings.set("sampling.hard_negative_fraction", &h.to_string())?;
    }
    let seed = settings.seed()?;
    let hash = settings.hash();
    let head = header(seed, &hash);
    let mut log = RunLog::default();

    let mut expr = with_path(&a.expression, load_expression(&a.expression, a.orientation.to_core()))?;
    if let Some(t) = &a.tfs {
        let unknown = expr.vocab.mark_tfs(&parse_tf_list(&read_file(t)?));
        if unknown > 0 {
            log.note(format!("{unknown} TF symbols not in the expression matrix were ignored"));
        }
    }
    let (net, report) = with_path(&a.network, load_network(&a.network, &mut expr.vocab))?;
    log.note(format!(
        "network: {} rows read, {} kept, {} unknown genes, {} self loops, {} duplicates",
        report.rows_read, report.kept, report.dropped_unknown, report.dropped_self_loops, report.duplicates
    ));
    let measured = network_density(&net, &expr.vocab)?;
    let density = settings.density.unwrap_or(measured);
    let plan = SamplingPlan::new(density, settings.hard_negative_fraction)?;
    let splits = make_splits(&net, &expr.vocab, &plan, seed)?;

    create_dir(&a.out)?;
    for split in Split::ALL {
        write_file(
            &a.out.join(format!("{}.csv", split.name())),
            &splits.to_csv(&expr.vocab, &[split], Some(&head)),
        )?;
    }
    let mut genes = format!("# {head}\ngene,tf\n");
    for i in 0..expr.vocab.len() {
        let _ = writeln!(genes, "{},{}", expr.vocab.symbol(i), u8::from(expr.vocab.is_tf(i)));
    }
    write_file(&a.out.join("genes.csv"), &genes)?;
    let expression_path = std::fs::canonicalize(&a.expression).unwrap_or_else(|_| a.expression.clone());
    let dataset_conf: BTreeMap<String, String> = [
        ("expression", expression_path.display().to_string()),
        ("orientation", a.orientation.name().to_string()),
        ("seed", seed.to_string()),
        ("density", density.to_string()),
        ("config_hash", hash.clone()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    write_file(&a.out.join("dataset.conf"), &format_key_values(&dataset_conf))?;
    write_file(&a.out.join("config.txt"), &format!("# {head}\n{}", settings.canonical()))?;

    let split_summary: serde_json::Map<String, serde_json::Value> = Split::ALL
        .iter()
        .map(|&s| {
            let (p, n) = splits.counts(s);
            let ratio = if n > 0 { serde_json::json!(p as f64 / n as f64) } else { serde_json::Value::Null };
            (
                s.name().to_string(),
                serde_json::json!({ "positives": p, "negatives": n, "ratio": ratio }),
            )
        })
        .collect();
    let summary = serde_json::json!({
        "seed": seed,
        "config_hash": hash,
        "cells": expr.n_cells(),
        "genes": expr.n_genes(),
        "tfs": expr.vocab.n_tfs(),
        "edges": net.len(),
        "measured_density": measured,
        "density": density,
        "target_ratio": plan.target_ratio(),
        "hard_negative_fraction": settings.hard_negative_fraction,
        "network_rows_dropped_unknown": report.dropped_unknown,
        "splits": split_summary,
    });
    write_file(
        &a.out.join("summary.json"),
        &(serde_json::to_string_pretty(&summary).expect("plain JSON values") + "\n"),
    )?;
    for s in Split::ALL {
        let (p, n) = splits.counts(s);
        log.note(format!("{}: {p} positives, {n} negatives", s.name()));
    }
    log.note(format!("density {density:.6}, target ratio {:.6}", plan.target_ratio()));
    log.write(&a.out)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("plain JSON values"));
    Ok(())
}

/// A prepared directory resolved against its expression matrix.
pub struct Prepared {
    pub expression: ExpressionMatrix,
    pub splits: LabeledSplits,
}

pub fn load_prepared(dir: &Path, expression: Option<&Path>) -> CliResult<Prepared> {
    require_dir(dir)?;
    let conf_path = dir.join("dataset.conf");
    require_file(&conf_path)?;
    let conf = parse_key_values(&read_file(&conf_path)?)
        .map_err(|e| CliError::input(format!("{}: {e}", conf_path.display())))?;
    let get = |k: &str| {
        conf.get(k)
            .cloned()
            .ok_or_else(|| CliError::input(format!("{}: missing {k}", conf_path.display())))
    };
    let expr_path = match expression {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(get("expression")?),
    };
    require_file(&expr_path)?;
    let orientation = OrientationArg::parse(&get("orientation")?)?;
    let mut expr = with_path(&expr_path, load_expression(&expr_path, orientation.to_core()))?;

    let genes_path = dir.join("genes.csv");
    require_file(&genes_path)?;
    let mut rows = Vec::new();
    for line in read_file(&genes_path)?.lines() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') || l == "gene,tf" {
            continue;
        }
        let (g, tf) = l
            .rsplit_once(',')
            .ok_or_else(|| CliError::input(format!("{}: malformed row {l:?}", genes_path.display())))?;
        rows.push((g.to_string(), tf == "1"));
    }
    let symbols: Vec<&str> = rows.iter().map(|r| r.0.as_str()).collect();
    if symbols != expr.vocab.symbols().iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(CliError::input(format!(
            "genes of {} do not match the prepared vocabulary",
            expr_path.display()
        )));
    }
    for (i, (_, tf)) in rows.iter().enumerate() {
        if *tf {
            expr.vocab.set_tf(i);
        }
    }
    let mut splits = LabeledSplits {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed: 0,
    };
    for split in Split::ALL {
        let p = dir.join(format!("{}.csv", split.name()));
        require_file(&p)?;
        let parsed = parse_splits(&read_file(&p)?, &expr.vocab).map_err(|e| CliError::input(format!("{}: {e}", p.display())))?;
        splits.seed = parsed.seed;
        for s in Split::ALL {
            if s != split && !parsed.get(s).is_empty() {
                return Err(CliError::input(format!("{} holds {} rows", p.display(), s.name())));
            }
        }
        let rows = parsed.get(split).to_vec();
        match split {
            Split::Train => splits.train = rows,
            Split::Validation => splits.validation = rows,
            Split::Test => splits.test = rows,
        }
    }
    splits.validate(&expr.vocab)?;
    Ok(Prepared {
        expression: expr,
        splits,
    })
}

fn checkpoint_meta(settings: &Settings, hash: &str, trained: &TrainedModel, variant: &str) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("run.seed".into(), settings.train.seed.to_string());
    m.insert("run.config_hash".into(), hash.to_string());
    m.insert("run.variant".into(), variant.to_string());
    m.insert("train.iterations".into(), settings.train.iterations.to_string());
    m.insert("train.learning_rate".into(), settings.train.learning_rate.to_string());
    m.insert("train.best_iteration".into(), trained.best_iteration.to_string());
    m.insert("train.selection".into(), format!("{:?}", trained.selection));
    m
}

fn variant_name(cfg: &ModelConfig) -> &'static str {
    Variant::ALL
        .into_iter()
        .find(|v| v.ablation() == cfg.ablation)
        .map_or("custom", Variant::name)
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let settings = a.flags.resolve()?;
    let seed = settings.seed()?;
    let prepared = load_prepared(&a.data, a.expression.as_deref())?;
    let hash = settings.hash();
    let head = header(seed, &hash);
    let mut log = RunLog::default();
    let data = Dataset::new(&prepared.expression, prepared.splits, settings.model.encoder.bin_count)?;
    log.note(format!(
        "training {} for {} iterations on {} cells x {} genes",
        variant_name(&settings.model),
        settings.train.iterations,
        data.n_cells(),
        data.n_genes()
    ));
    let trained = train(&data, &settings.model, &settings.train)?;
    log.note(format!(
        "kept parameters from iteration {} ({:?})",
        trained.best_iteration, trained.selection
    ));
    create_dir(&a.out)?;
    let channels = trained.model.channel_outputs(&data)?;
    let meta = checkpoint_meta(&settings, &hash, &trained, variant_name(&settings.model));
    let ckpt = Checkpoint::from_model(&trained.model, &data.vocab, &channels, &meta);
    ckpt.write(&a.out.join("model.ckpt"))?;
    write_file(&a.out.join("history.csv"), &trained.history_csv(Some(&head)))?;
    write_file(&a.out.join("config.txt"), &format!("# {head}\n{}", settings.canonical()))?;
    if a.dump_scores {
        match trained.model.encode_cells(&data)?.and_then(|c| c.attention_sums) {
            Some(sums) => {
                let summary = AttentionSummary::from_sums(sums)?;
                write_file(&a.out.join("scores.csv"), &summary.scores_csv(&data.vocab, &data.cell_ids, Some(&head)))?;
            }
            None => log.note("no attention scores to dump for this configuration"),
        }
    }
    let report = evaluate(&trained.model, &data, Split::Validation, &hash);
    match report {
        Ok(r) => log.note(format!("validation AUROC {:.4}, AUPRC {:.4}", r.auroc, r.auprc)),
        Err(e) => log.note(format!("validation metrics unavailable: {e}")),
    }
    log.write(&a.out)?;
    println!("wrote {}", a.out.join("model.ckpt").display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, Model, GeneVocabulary)> {
    if !path.is_file() {
        return Err(CliError::Core(grnlink_core::Error::Checkpoint(format!(
            "checkpoint not found: {}",
            path.display()
        ))));
    }
    let ckpt = Checkpoint::read(path)?;
    let (model, vocab, _) = ckpt.to_model()?;
    Ok((ckpt, model, vocab))
}

fn run_identity(ckpt: &Checkpoint) -> (u64, String) {
    let seed = ckpt.meta.get("run.seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let hash = ckpt.meta.get("run.config_hash").cloned().unwrap_or_default();
    (seed, hash)
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let split = Split::parse(&a.split).ok_or_else(|| CliError::input(format!("unknown split {:?}", a.split)))?;
    let (ckpt, model, vocab) = load_checkpoint(&a.checkpoint)?;
    let prepared = load_prepared(&a.data, a.expression.as_deref())?;
    if prepared.expression.vocab.symbols() != vocab.symbols() {
        return Err(CliError::input("the checkpoint was trained on a different gene vocabulary"));
    }
    let (seed, hash) = run_identity(&ckpt);
    let data = Dataset::new(&prepared.expression, prepared.splits, model.config.encoder.bin_count)?;
    let report = evaluate(&model, &data, split, &hash)?;
    let kv = report.to_key_value();
    print!("{kv}");
    if let Some(out) = &a.out {
        create_dir(out)?;
        let head = header(seed, &hash);
        write_file(&out.join(format!("metrics_{}.txt", split.name())), &format!("# {head}\n{kv}"))?;
        write_file(
            &out.join(format!("metrics_{}.csv", split.name())),
            &format!("# {head}\n{}\n{}\n", MetricsReport::CSV_HEADER, report.csv_row()),
        )?;
    }
    Ok(())
}

fn cmd_ablate(a: &AblateArgs) -> CliResult<()> {
    let settings = a.flags.resolve()?;
    let seed = settings.seed()?;
    if settings.model.ablation != Default::default() {
        log::warn!("ablation flags are ignored; every variant is trained");
    }
    let prepared = load_prepared(&a.data, a.expression.as_deref())?;
    let mut base = settings.clone();
    base.model.ablation = Default::default();
    let hash = base.hash();
    let head = header(seed, &hash);
    let mut log = RunLog::default();
    let data = Dataset::new(&prepared.expression, prepared.splits, base.model.encoder.bin_count)?;
    create_dir(&a.out)?;
    let mut table = format!("# {head}\nvariant,auroc,auprc,positives,negatives\n");
    for variant in Variant::ALL {
        let mut cfg = base.model.clone();
        cfg.ablation = variant.ablation();
        log.note(format!("training {}", variant.name()));
        let trained = train(&data, &cfg, &base.train)?;
        let r = evaluate(&trained.model, &data, Split::Test, &hash)?;
        log.note(format!("{}: test AUROC {:.4}, AUPRC {:.4}", variant.name(), r.auroc, r.auprc));
        let _ = writeln!(table, "{},{},{},{},{}", variant.name(), r.auroc, r.auprc, r.positives, r.negatives);
        write_file(
            &a.out.join(format!("history_{}.csv", variant.name())),
            &trained.history_csv(Some(&head)),
        )?;
    }
    write_file(&a.out.join("ablation.csv"), &table)?;
    write_file(&a.out.join("config.txt"), &format!("# {head}\n{}", base.canonical()))?;
    log.write(&a.out)?;
    print!("{table}");
    Ok(())
}

fn read_pairs(path: &Path, vocab: &GeneVocabulary) -> CliResult<Vec<(usize, usize)>> {
    require_file(path)?;
    let text = read_file(path)?;
    let mut out = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let l = line.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let mut f = l.split(',').map(|s| s.trim().trim_matches('"'));
        let (s, t) = match (f.next(), f.next()) {
            (Some(s), Some(t)) => (s, t),
            _ => return Err(CliError::input(format!("{}:{}: expected tf,target", path.display(), i + 1))),
        };
        let (si, ti) = (vocab.index_of(s), vocab.index_of(t));
        if first && si.is_none() && ti.is_none() {
            first = false;
            continue;
        }
        first = false;
        match (si, ti) {
            (Some(a), Some(b)) => out.push((a, b)),
            _ => {
                return Err(CliError::input(format!(
                    "{}:{}: unknown gene in pair {s},{t}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

/// DOT digraph of the highest-scoring `k` edges.
pub fn dot_graph(ranked: &[((usize, usize), f64)], vocab: &GeneVocabulary, k: usize, comment: &str) -> String {
    let mut s = format!("// {comment}\ndigraph grn {{\n");
    for &((a, b), p) in ranked.iter().take(k) {
        let _ = writeln!(
            s,
            "  \"{}\" -> \"{}\" [weight={p:.6}];",
            vocab.symbol(a).replace('"', "\\\""),
            vocab.symbol(b).replace('"', "\\\"")
        );
    }
    s.push_str("}\n");
    s
}

fn cmd_predict(a: &PredictArgs) -> CliResult<()> {
    let (ckpt, model, vocab) = load_checkpoint(&a.checkpoint)?;
    let (_, _, channels) = ckpt.to_model()?;
    let (seed, hash) = run_identity(&ckpt);
    let head = header(seed, &hash);
    let ranked = if a.all {
        rank_all_pairs(|p| model.score_pairs(&channels, p), vocab.tf_flags())?
    } else {
        let path = a.pairs.as_ref().expect("clap requires --pairs without --all");
        let pairs = read_pairs(path, &vocab)?;
        if !a.allow_non_tf {
            if let Some(&(s, _)) = pairs.iter().find(|p| !vocab.is_tf(p.0)) {
                return Err(CliError::input(format!(
                    "source {} is not a TF (pass --allow-non-tf to score it)",
                    vocab.symbol(s)
                )));
            }
        }
        let scores = model.score_pairs(&channels, &pairs)?;
        let mut r: Vec<((usize, usize), f64)> = pairs.into_iter().zip(scores).collect();
        r.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        r
    };
    let mut csv = format!("# {head}\ntf,target,score\n");
    for ((s, t), p) in &ranked {
        let _ = writeln!(csv, "{},{},{p}", vocab.symbol(*s), vocab.symbol(*t));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_file(&a.out, &csv)?;
    if let Some(dot) = &a.dot {
        write_file(dot, &dot_graph(&ranked, &vocab, a.top_k, &head))?;
    }
    println!("wrote {} predictions to {}", ranked.len(), a.out.display());
    Ok(())
}
