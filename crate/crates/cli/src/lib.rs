//! Command implementations shared by the `mllm` and `ocr-forge` binaries.
//!
//! Every command returns a JSON summary (printed as one line on stdout) and
//! writes a human-readable table to stderr.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use mllm_core::dialog::convert::TaskSample;
use mllm_core::dialog::record::ConversationRecord;
use mllm_core::eval::{eval_exact_match, eval_rec, generate_answers, EvalResult, Prediction};
use mllm_core::jsonl::{read_jsonl, write_jsonl};
use mllm_core::moe::RouteOptions;
use mllm_core::multimodal::{DefaultResolver, FeatureCache, MultimodalModel, PreparedSample};
use mllm_core::ocr::{page_to_qa, synth_page, MergeParams, OcrMode, PageRecord, SynthParams};
use mllm_core::routing::report::{
    read_sweep_csv, read_usage_csv, sweep_svg, usage_svg, write_sweep_csv, write_sweep_summary_csv, write_usage_csv,
};
use mllm_core::routing::{entropy_profile, parse_values, prune_sweep, sweep_active_experts, RoutingTrace, SweepPoint};
use mllm_core::synth::scene_dataset;
use mllm_core::train::{load_checkpoint, prepare_records, prepare_sources, TrainConfig, Trainer};
use mllm_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mllm", version, about = "Data conversion, training, evaluation and routing analysis for the toy MoE vision-language model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert task-annotation JSONL into conversation records.
    Convert(ConvertArgs),
    /// Turn OCR page records into question/answer conversations.
    Ocr(OcrArgs),
    /// Write synthetic scene records or OCR pages.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train from a config file, or resume from a checkpoint.
    Train(TrainArgs),
    /// Score answers against reference records.
    Eval(EvalArgs),
    /// Trace routing over a dataset and write per-expert usage.
    RouteStats(RouteStatsArgs),
    /// Evaluate the loss at several top-k settings.
    KSweep(KSweepArgs),
    /// Evaluate the loss with random expert subsets kept per layer.
    PruneSweep(PruneSweepArgs),
    /// Render a usage or sweep CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Task-annotation JSONL (one `{"task": ...}` object per line).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output conversation JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Source name stored in each record's tags.
    #[arg(long, default_value = "converted")]
    pub source: String,
}

#[derive(Debug, Args)]
pub struct OcrArgs {
    /// Question style: full_text, spotting or layout.
    #[arg(long, default_value = "full_text")]
    pub mode: OcrMode,
    /// Page record JSONL.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output conversation JSONL.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "ocr")]
    pub source: String,
    /// Spans with a lower share of printable characters are dropped.
    #[arg(long, default_value_t = 0.95)]
    pub min_printable_ratio: f64,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Procedural scenes, three records each (detection, grounding, VQA).
    Scenes {
        /// Seed of the first scene; scenes use consecutive seeds.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "synth")]
        source: String,
    },
    /// Synthetic OCR pages with split and noise spans.
    Pages {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        n: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        columns: usize,
        #[arg(long, default_value_t = 0.3)]
        split_prob: f64,
        #[arg(long, default_value_t = 0.1)]
        noise_prob: f64,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config (`key = value` lines). Source paths are relative to it.
    #[arg(long, required_unless_present = "resume")]
    pub config: Option<PathBuf>,
    /// Output directory for metrics.csv and checkpoints.
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Directory that source paths are resolved against when resuming
    /// without --config.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// Stop after this global step even if total_steps is larger.
    #[arg(long)]
    pub stop_at: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Rec,
    Exact,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference conversation JSONL.
    #[arg(long)]
    pub data: PathBuf,
    /// Precomputed answers (`{"id": ..., "answer": ...}` per line).
    #[arg(long, conflicts_with = "checkpoint")]
    pub answers: Option<PathBuf>,
    /// Generate answers greedily with this checkpoint instead.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "rec")]
    pub metric: Metric,
    /// Maximum generated tokens per answer.
    #[arg(long, default_value_t = 96)]
    pub max_new: usize,
    /// Write the generated answers here.
    #[arg(long)]
    pub predictions_out: Option<PathBuf>,
    /// Only score records of this domain (e.g. `grounding`).
    #[arg(long)]
    pub domain: Option<String>,
}

/// Where the analysed model and data come from.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Trained checkpoint; without it a freshly initialized model is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Config describing the fresh model (ignored with --checkpoint).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed of the fresh model and of any random draws.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Conversation JSONL; media paths are relative to its directory.
    /// Defaults to synthetic scenes.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of synthetic scenes when --data is absent.
    #[arg(long, default_value_t = 4)]
    pub scenes: u64,
    /// Use at most this many records.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RouteStatsArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Active experts per token (defaults to the model's k).
    #[arg(long)]
    pub k: Option<usize>,
    /// Usage CSV (layer,expert,tag,fraction).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KSweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Values of k, e.g. `1..8` or `1,2,4,8`.
    #[arg(long, default_value = "1..8")]
    pub k: String,
    /// Per-run CSV (k,run,metric).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional summary CSV (k,runs,mean,variance).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PruneSweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Numbers of kept experts per layer, e.g. `1..8`.
    #[arg(long, default_value = "1..8")]
    pub n: String,
    /// Independent random draws per n.
    #[arg(long, default_value_t = 3)]
    pub runs: usize,
    /// Active experts per token (defaults to the model's k).
    #[arg(long)]
    pub k: Option<usize>,
    /// Per-run CSV (n,run,metric).
    #[arg(long)]
    pub out: PathBuf,
    /// Optional summary CSV (n,runs,mean,variance).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Usage CSV from route-stats or a sweep CSV.
    pub csv: PathBuf,
    /// Output SVG; defaults to the input path with an .svg extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for a finished command.
pub fn exit_code(result: &Result<Value>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) if e.is_validation() => 2,
        Err(_) => 1,
    }
}

/// Prints the summary or the error and returns the exit status.
pub fn finish(result: Result<Value>) -> i32 {
    let code = exit_code(&result);
    match result {
        Ok(v) => println!("{v}"),
        Err(e) => {
            eprintln!("error: {e}");
            println!("{}", json!({"ok": false, "error": e.to_string(), "exit_code": code}));
        }
    }
    code
}

pub fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
}

pub fn run(cli: Cli) -> Result<Value> {
    match cli.command {
        Command::Convert(a) => convert(&a),
        Command::Ocr(a) => ocr(&a),
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::RouteStats(a) => route_stats(&a),
        Command::KSweep(a) => k_sweep(&a),
        Command::PruneSweep(a) => prune_sweep_cmd(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn parent_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn table(rows: &[Vec<String>]) {
    let widths: Vec<usize> =
        (0..rows.first().map_or(0, Vec::len)).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    for r in rows {
        let line: Vec<String> = r.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        eprintln!("{}", line.join("  ").trim_end());
    }
}

pub fn convert(a: &ConvertArgs) -> Result<Value> {
    let tasks: Vec<TaskSample> = read_jsonl(&a.input)?;
    let mut out = Vec::new();
    let mut skipped = 0usize;
    for t in &tasks {
        match t.convert(&a.source)? {
            Some(r) => {
                r.validate()?;
                out.push(r);
            }
            None => skipped += 1,
        }
    }
    write_jsonl(&a.out, &out)?;
    table(&[
        vec!["read".into(), "written".into(), "skipped".into()],
        vec![tasks.len().to_string(), out.len().to_string(), skipped.to_string()],
    ]);
    Ok(json!({"command": "convert", "read": tasks.len(), "written": out.len(), "skipped": skipped, "out": a.out}))
}

pub fn ocr(a: &OcrArgs) -> Result<Value> {
    let pages: Vec<PageRecord> = read_jsonl(&a.input)?;
    let params = MergeParams { min_printable_ratio: a.min_printable_ratio, ..MergeParams::default() };
    let mut out = Vec::new();
    for p in &pages {
        p.validate()?;
        if let Some(r) = page_to_qa(p, a.mode, &params, &a.source)? {
            out.push(r);
        }
    }
    write_jsonl(&a.out, &out)?;
    let skipped = pages.len() - out.len();
    table(&[
        vec!["mode".into(), "pages".into(), "written".into(), "empty".into()],
        vec![a.mode.to_string(), pages.len().to_string(), out.len().to_string(), skipped.to_string()],
    ]);
    Ok(json!({"command": "ocr", "mode": a.mode.to_string(), "pages": pages.len(), "written": out.len(), "skipped": skipped, "out": a.out}))
}

pub fn synth(c: &SynthCommand) -> Result<Value> {
    match c {
        SynthCommand::Scenes { seed, n, out, source } => {
            let recs = scene_dataset(*seed, *n, source)?;
            write_jsonl(out, &recs)?;
            eprintln!("{} records from {n} scenes", recs.len());
            Ok(json!({"command": "synth scenes", "scenes": n, "records": recs.len(), "out": out}))
        }
        SynthCommand::Pages { seed, n, out, columns, split_prob, noise_prob } => {
            let params = SynthParams { n_cols: *columns, split_prob: *split_prob, noise_prob: *noise_prob, ..SynthParams::default() };
            let pages: Vec<PageRecord> = (0..*n).map(|i| synth_page(seed + i, &params).0).collect();
            write_jsonl(out, &pages)?;
            eprintln!("{n} pages");
            Ok(json!({"command": "synth pages", "pages": n, "out": out}))
        }
    }
}

pub fn train(a: &TrainArgs) -> Result<Value> {
    let resolver_for = |base: &Path| DefaultResolver { root: base.to_path_buf() };
    let mut trainer = match &a.resume {
        Some(dir) => {
            let ck = load_checkpoint(dir)?;
            let base = match (&a.data_root, &a.config) {
                (Some(r), _) => r.clone(),
                (None, Some(c)) => parent_dir(c),
                (None, None) => PathBuf::from("."),
            };
            let samples = prepare_sources(&ck.config, &ck.model, &resolver_for(&base), &base)?;
            Trainer::resume(dir, samples)?
        }
        None => {
            let path = a.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
            let cfg = TrainConfig::load(path)?;
            let base = a.data_root.clone().unwrap_or_else(|| parent_dir(path));
            let model = MultimodalModel::init(cfg.moe.clone(), cfg.mov.clone(), cfg.seed)?;
            let samples = prepare_sources(&cfg, &model, &resolver_for(&base), &base)?;
            Trainer::new(cfg, model, samples)?
        }
    };
    let report = trainer.run(&a.out, a.stop_at)?;
    table(&[
        vec!["steps".into(), "final_step".into(), "last_loss".into(), "eval_loss".into()],
        vec![
            report.steps_run.to_string(),
            report.final_step.to_string(),
            format!("{:.4}", report.last_loss),
            report.eval_loss.map_or("-".into(), |l| format!("{l:.4}")),
        ],
    ]);
    Ok(json!({
        "command": "train",
        "steps_run": report.steps_run,
        "final_step": report.final_step,
        "last_loss": finite_or_null(report.last_loss),
        "eval_loss": report.eval_loss,
        "stopped_early": report.stopped_early,
        "checkpoint": report.checkpoint,
        "frozen_hash": trainer.model.frozen_hash(),
        "projection_hash": trainer.model.projection_hash(),
        "lm_hash": trainer.model.lm_hash(),
    }))
}

fn finite_or_null(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

pub fn eval(a: &EvalArgs) -> Result<Value> {
    let mut records: Vec<ConversationRecord> = read_jsonl(&a.data)?;
    if let Some(d) = &a.domain {
        records.retain(|r| &r.tags.domain == d);
    }
    if records.is_empty() {
        return Err(Error::Validation(format!("no records to evaluate in {}", a.data.display())));
    }
    let answers: Vec<String> = match (&a.answers, &a.checkpoint) {
        (Some(path), _) => {
            let preds: Vec<Prediction> = read_jsonl(path)?;
            let by_id: BTreeMap<&str, &str> = preds.iter().map(|p| (p.id.as_str(), p.answer.as_str())).collect();
            records
                .iter()
                .map(|r| {
                    by_id
                        .get(r.id.as_str())
                        .map(|s| s.to_string())
                        .ok_or_else(|| Error::Validation(format!("no answer for record {:?}", r.id)))
                })
                .collect::<Result<_>>()?
        }
        (None, Some(dir)) => {
            let model = load_checkpoint(dir)?.model;
            let resolver = DefaultResolver { root: parent_dir(&a.data) };
            generate_answers(&model, &records, &resolver, &model.lm.default_route(), a.max_new)?
        }
        (None, None) => return Err(Error::Validation("eval needs --answers or --checkpoint".into())),
    };
    if let Some(p) = &a.predictions_out {
        let preds: Vec<Prediction> =
            records.iter().zip(&answers).map(|(r, ans)| Prediction { id: r.id.clone(), answer: ans.clone() }).collect();
        write_jsonl(p, &preds)?;
    }
    let result: EvalResult = match a.metric {
        Metric::Rec => eval_rec(&records, &answers)?,
        Metric::Exact => eval_exact_match(&records, &answers)?,
    };
    table(&[
        vec!["metric".into(), "value".into(), "n".into()],
        vec![result.metric_name.clone(), format!("{:.4}", result.value), result.n_samples.to_string()],
    ]);
    Ok(json!({"command": "eval", "metric_name": result.metric_name, "value": result.value, "n_samples": result.n_samples}))
}

/// A model plus the prepared samples it is analysed on.
pub struct Workbench {
    pub model: MultimodalModel,
    pub samples: Vec<PreparedSample>,
}

impl Workbench {
    pub fn load(a: &ModelArgs) -> Result<Self> {
        let model = match (&a.checkpoint, &a.config) {
            (Some(dir), _) => load_checkpoint(dir)?.model,
            (None, Some(path)) => {
                let cfg = TrainConfig::load(path)?;
                MultimodalModel::init(cfg.moe, cfg.mov, a.seed)?
            }
            (None, None) => {
                let cfg = TrainConfig::default();
                MultimodalModel::init(cfg.moe, cfg.mov, a.seed)?
            }
        };
        let (mut records, root): (Vec<ConversationRecord>, PathBuf) = match &a.data {
            Some(p) => (read_jsonl(p)?, parent_dir(p)),
            None => (scene_dataset(0, a.scenes, "synth")?, PathBuf::new()),
        };
        if let Some(n) = a.limit {
            records.truncate(n);
        }
        if records.is_empty() {
            return Err(Error::Validation("no records to analyse".into()));
        }
        let samples = prepare_records(&model, &records, &DefaultResolver { root }, &mut FeatureCache::default())?;
        Ok(Workbench { model, samples })
    }

    pub fn n_layers(&self) -> usize {
        self.model.lm.config.n_layers
    }

    pub fn n_experts(&self) -> usize {
        self.model.lm.config.n_experts
    }

    pub fn k(&self, k: Option<usize>) -> usize {
        k.unwrap_or(self.model.lm.config.k_active)
    }

    pub fn loss(&self, route: &RouteOptions) -> Result<f64> {
        self.model.dataset_loss(&self.samples, route)
    }
}

pub fn route_stats(a: &RouteStatsArgs) -> Result<Value> {
    let wb = Workbench::load(&a.model)?;
    let k = wb.k(a.k);
    let mut trace = RoutingTrace::new(wb.n_experts());
    wb.model.trace_samples(&wb.samples, &RouteOptions::with_k(k), &mut trace)?;
    trace.check_conservation()?;
    write_usage_csv(&a.out, &trace)?;
    let mut rows = vec![vec!["tag".to_string(), "layer".into(), "tokens".into(), "entropy_nats".into()]];
    let mut entropy = serde_json::Map::new();
    for tag in trace.tags() {
        let profile = entropy_profile(&trace, &tag)?;
        for &(layer, h) in &profile {
            let tokens = trace.tokens.get(&(layer, tag.clone())).copied().unwrap_or(0);
            rows.push(vec![tag.to_string(), layer.to_string(), tokens.to_string(), format!("{h:.4}")]);
        }
        entropy.insert(tag.to_string(), json!(profile.iter().map(|p| p.1).collect::<Vec<_>>()));
    }
    table(&rows);
    Ok(json!({"command": "route-stats", "k": k, "samples": wb.samples.len(), "entropy": entropy, "out": a.out}))
}

fn sweep_table(label: &str, points: &[SweepPoint]) {
    let mut rows = vec![vec![label.to_string(), "runs".into(), "mean".into(), "variance".into()]];
    rows.extend(points.iter().map(|p| vec![p.value.to_string(), p.runs.len().to_string(), format!("{:.6}", p.mean), format!("{:.3e}", p.variance)]));
    table(&rows);
}

fn sweep_summary(command: &str, label: &str, points: &[SweepPoint], out: &Path) -> Value {
    let pts: Vec<Value> =
        points.iter().map(|p| json!({label: p.value, "mean": p.mean, "variance": p.variance, "runs": p.runs})).collect();
    json!({"command": command, "metric": "loss", "points": pts, "out": out})
}

pub fn k_sweep(a: &KSweepArgs) -> Result<Value> {
    let ks = parse_values(&a.k)?;
    let wb = Workbench::load(&a.model)?;
    let points = sweep_active_experts(wb.n_experts(), &ks, |route| wb.loss(route))?;
    write_sweep_csv(&a.out, "k", &points)?;
    if let Some(s) = &a.summary {
        write_sweep_summary_csv(s, "k", &points)?;
    }
    sweep_table("k", &points);
    Ok(sweep_summary("k-sweep", "k", &points, &a.out))
}

pub fn prune_sweep_cmd(a: &PruneSweepArgs) -> Result<Value> {
    let ns = parse_values(&a.n)?;
    let wb = Workbench::load(&a.model)?;
    let k = wb.k(a.k);
    let points = prune_sweep(wb.n_layers(), wb.n_experts(), k, &ns, a.runs, a.model.seed, |route| wb.loss(route))?;
    write_sweep_csv(&a.out, "n", &points)?;
    if let Some(s) = &a.summary {
        write_sweep_summary_csv(s, "n", &points)?;
    }
    sweep_table("n", &points);
    Ok(sweep_summary("prune-sweep", "n", &points, &a.out))
}

pub fn plot(a: &PlotArgs) -> Result<Value> {
    let header = std::fs::read_to_string(&a.csv)?.lines().next().unwrap_or("").trim().to_string();
    let out = a.out.clone().unwrap_or_else(|| a.csv.with_extension("svg"));
    let (kind, svg, panels) = if header == "layer,expert,tag,fraction" {
        let rows = read_usage_csv(&a.csv)?;
        let mut layers: Vec<usize> = rows.iter().map(|r| r.0).collect();
        layers.sort();
        layers.dedup();
        ("usage", usage_svg(&rows), layers.len())
    } else if header.ends_with(",run,metric") {
        let (label, points) = read_sweep_csv(&a.csv)?;
        ("sweep", sweep_svg(&label, &points), 1)
    } else {
        return Err(Error::Validation(format!("{}: unrecognized CSV header {header:?}", a.csv.display())));
    };
    std::fs::write(&out, svg)?;
    eprintln!("{kind} plot with {panels} panel(s) -> {}", out.display());
    Ok(json!({"command": "plot", "kind": kind, "panels": panels, "out": out}))
}
