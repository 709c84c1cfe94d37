//! The `mfpt` command line: synthetic data, training, evaluation,
//! robustness sweeps, label triage and dataset statistics.

pub mod config;
mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mfpt_core::data::{dataset_stats, load_manifest, load_manifest_unverified, DatasetManifest, Split};
use mfpt_core::eval::{
    evaluate_subset, predict_samples, robustness_csv, robustness_sweep, select_subset,
    DegradationKind, DegradationSpec, DEFAULT_THRESHOLD,
};
use mfpt_core::model::{load_checkpoint, save_checkpoint, Mfpt};
use mfpt_core::synth::{synthesize, SynthConfig, MANIFEST_FILE};
use mfpt_core::train::{train_with_progress, write_trace};
use mfpt_core::triage::{run_triage, Decision};
use serde_json::{json, Value};

pub use config::{Paths, RunConfig};
pub use error::{CliError, CliResult};

pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const TRACE_FILE: &str = "trace.csv";
pub const RESOLVED_CONFIG: &str = "config.json";

#[derive(Parser, Debug)]
#[command(name = "mfpt", version, about = "Diffusion-edit localization with multi-frequency prompt tuning")]
pub struct Cli {
    /// Worker threads for per-image parallelism (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Train a model and keep the best validated checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a manifest subset.
    Eval(EvalArgs),
    /// Evaluate under a sweep of JPEG or blur degradations.
    Robustness(RobustnessArgs),
    /// Route probability maps to accept/review/discard.
    Triage(TriageArgs),
    /// Record counts and edited-area histogram of a manifest.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override such as `model.freq_ratio=0.75` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    /// `WxH` or a single side length.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of each edited image covered by the planted edit.
    #[arg(long, default_value_t = 0.1)]
    pub area_ratio: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for the checkpoint, trace and resolved config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `train.max_iterations`.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Seeds model initialization and batch order; overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value = "DEAL-Full")]
    pub subset: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `jpeg` or `blur`.
    #[arg(long)]
    pub kind: DegradationKind,
    /// Comma-separated levels; defaults to the standard grid of the kind.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long, default_value = "DEAL-Full")]
    pub subset: String,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Also write the CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TriageArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Directory of `<id>.png` or `<id>.f32` probability maps.
    #[arg(long)]
    pub probmaps: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
    /// Parse records only; skips file checks and the area histogram.
    #[arg(long)]
    pub no_verify: bool,
    /// Also write the JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("invalid size `{s}`"));
    match s.split_once(['x', 'X']) {
        Some((w, h)) => Ok((parse(w)?, parse(h)?)),
        None => parse(s).map(|n| (n, n)),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn main_with<I, T>(args: I, stdout: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> CliResult<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Usage(e.to_string()))?;
    let mut buf = Vec::new();
    pool.install(|| match cli.command {
        Command::Synth(a) => cmd_synth(&a, &mut buf),
        Command::Train(a) => cmd_train(&a, &mut buf),
        Command::Eval(a) => cmd_eval(&a, &mut buf),
        Command::Robustness(a) => cmd_robustness(&a, &mut buf),
        Command::Triage(a) => cmd_triage(&a, &mut buf),
        Command::Stats(a) => cmd_stats(&a, &mut buf),
    })?;
    stdout
        .write_all(&buf)
        .and_then(|_| stdout.flush())
        .map_err(|e| io_err(Path::new("<stdout>"), e))
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(mfpt_core::Error::Io { path: path.to_path_buf(), source: e })
}

fn emit(stdout: &mut Vec<u8>, text: &str) -> CliResult<()> {
    stdout.extend_from_slice(text.as_bytes());
    Ok(())
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn pretty(v: &impl serde::Serialize) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(mfpt_core::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn required(flag: Option<&PathBuf>, from_config: &Option<PathBuf>, name: &str) -> CliResult<PathBuf> {
    flag.or(from_config.as_ref())
        .cloned()
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set paths.{name})")))
}

fn manifest_path(flag: Option<&PathBuf>, cfg: &RunConfig) -> CliResult<PathBuf> {
    let path = required(flag, &cfg.paths.manifest, "manifest")?;
    if !path.is_file() {
        return Err(CliError::MissingManifest(path));
    }
    Ok(path)
}

fn check_threshold(t: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(CliError::Usage(format!("--threshold {t} outside [0, 1]")));
    }
    Ok(())
}

/// Loads a checkpoint and, when the configuration sets any `model` key,
/// requires the checkpoint's architecture to match it.
fn checkpoint_for(path: &Path, cfg: &RunConfig, doc: &Value) -> CliResult<Mfpt> {
    let model = load_checkpoint(path)?;
    let explicit = doc.get("model").and_then(Value::as_object).filter(|m| !m.is_empty());
    if explicit.is_some() && model.config() != &cfg.model {
        let (want, have) = (
            serde_json::to_value(&cfg.model).map_err(mfpt_core::Error::from)?,
            serde_json::to_value(model.config()).map_err(mfpt_core::Error::from)?,
        );
        let fields: Vec<String> = want
            .as_object()
            .into_iter()
            .flatten()
            .filter(|(k, v)| have.get(k.as_str()) != Some(v))
            .map(|(k, v)| format!("model.{k}: config {v}, checkpoint {}", have[k.as_str()]))
            .collect();
        return Err(CliError::CheckpointMismatch { path: path.to_path_buf(), detail: fields.join("; ") });
    }
    Ok(model)
}

pub fn cmd_synth(a: &SynthArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    let cfg = SynthConfig {
        count: a.count,
        width: a.size.0,
        height: a.size.1,
        seed: a.seed,
        area_ratio: a.area_ratio,
        ..SynthConfig::default()
    };
    let manifest = synthesize(&a.out, &cfg)?;
    let stats = dataset_stats(&manifest, None)?;
    emit(
        stdout,
        &pretty(&json!({
            "manifest": a.out.join(MANIFEST_FILE),
            "n": stats.n,
            "splits": stats.splits,
            "roles": stats.roles,
        }))?,
    )
}

pub fn cmd_train(a: &TrainArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref(), &a.config.set)?;
    if let Some(n) = a.iterations {
        cfg.train.max_iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let manifest_file = manifest_path(a.manifest.as_ref(), &cfg)?;
    let out = required(a.out.as_ref(), &cfg.paths.out, "out")?;
    let manifest = load_manifest(&manifest_file)?;

    let mut model = Mfpt::new(cfg.model.clone(), cfg.train.seed)?;
    let initial = model.params().clone();
    let outcome = train_with_progress(&mut model, &manifest, &cfg.train, |r| {
        if let Some(v) = r.val_pf1 {
            eprintln!("iteration {}: loss {:.6}, val pF1 {:.4}", r.iteration, r.train_loss, v);
        }
    })?;
    let (best_iteration, best_params) = match &outcome.best {
        Some((i, p)) => (*i, p.clone()),
        None => (0, initial),
    };
    *model.params_mut() = best_params;

    std::fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let ckpt = out.join(BEST_CHECKPOINT);
    let trace = out.join(TRACE_FILE);
    save_checkpoint(&model, &ckpt)?;
    write_trace(&outcome.records, &trace)?;
    let mut resolved = cfg.clone();
    resolved.paths.manifest = Some(manifest_file);
    write_file(&out.join(RESOLVED_CONFIG), &pretty(&resolved)?)?;

    let best_val = outcome.validation_trace().iter().find(|(i, _)| *i == best_iteration).map(|(_, v)| *v);
    emit(
        stdout,
        &pretty(&json!({
            "checkpoint": ckpt,
            "trace": trace,
            "iterations": outcome.records.len(),
            "best_iteration": best_iteration,
            "best_val_pf1": best_val,
        }))?,
    )
}

pub fn cmd_eval(a: &EvalArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    let (cfg, doc) = RunConfig::load_raw(a.config.config.as_deref(), &a.config.set)?;
    check_threshold(a.threshold)?;
    let manifest_file = manifest_path(a.manifest.as_ref(), &cfg)?;
    let ckpt = required(a.checkpoint.as_ref(), &cfg.paths.checkpoint, "checkpoint")?;
    let manifest = load_manifest(&manifest_file)?;
    let model = checkpoint_for(&ckpt, &cfg, &doc)?;
    let samples = select_subset(&manifest, &a.subset);
    let preds = predict_samples(&model, &manifest, &samples, None)?;
    let report = evaluate_subset(&preds, &manifest, &a.subset, a.threshold)?;
    let mut text = report.to_json()?;
    text.push('\n');
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    emit(stdout, &text)
}

pub fn cmd_robustness(a: &RobustnessArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    let (cfg, doc) = RunConfig::load_raw(a.config.config.as_deref(), &a.config.set)?;
    check_threshold(a.threshold)?;
    let spec = match &a.levels {
        Some(levels) => DegradationSpec::parse(a.kind, levels)?,
        None => DegradationSpec::standard(a.kind),
    };
    if spec.levels.is_empty() {
        return Err(CliError::Usage("--levels is empty".into()));
    }
    let manifest_file = manifest_path(a.manifest.as_ref(), &cfg)?;
    let ckpt = required(a.checkpoint.as_ref(), &cfg.paths.checkpoint, "checkpoint")?;
    let manifest = load_manifest(&manifest_file)?;
    let model = checkpoint_for(&ckpt, &cfg, &doc)?;
    let rows = robustness_sweep(&model, &manifest, &spec, &a.subset, a.threshold)?;
    let text = robustness_csv(&rows);
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    emit(stdout, &text)
}

pub fn cmd_triage(a: &TriageArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    let cfg = RunConfig::load(a.config.config.as_deref(), &a.config.set)?;
    let manifest_file = manifest_path(a.manifest.as_ref(), &cfg)?;
    let probmaps = required(a.probmaps.as_ref(), &cfg.paths.probmaps, "probmaps")?;
    let out = required(a.out.as_ref(), &cfg.paths.out, "out")?;
    if !probmaps.is_dir() {
        return Err(CliError::Usage(format!("probability map directory not found: {}", probmaps.display())));
    }
    let manifest = load_manifest_unverified(&manifest_file)?;
    let result = run_triage(&probmaps, &manifest, &cfg.triage, &out)?;
    emit(
        stdout,
        &pretty(&json!({
            "accept": result.count(Decision::Accept),
            "review": result.count(Decision::Review),
            "discard": result.count(Decision::Discard),
            "out": out,
        }))?,
    )
}

pub fn cmd_stats(a: &StatsArgs, stdout: &mut Vec<u8>) -> CliResult<()> {
    if a.bins == 0 {
        return Err(CliError::Usage("--bins must be at least 1".into()));
    }
    if !a.manifest.is_file() {
        return Err(CliError::MissingManifest(a.manifest.clone()));
    }
    let manifest: DatasetManifest = if a.no_verify {
        load_manifest_unverified(&a.manifest)?
    } else {
        load_manifest(&a.manifest)?
    };
    let stats = dataset_stats(&manifest, (!a.no_verify).then_some(a.bins))?;
    let text = pretty(&stats)?;
    if let Some(out) = &a.out {
        write_file(out, &text)?;
    }
    emit(stdout, &text)
}

/// Split sizes in the order train, val, test.
pub fn split_counts(stats: &mfpt_core::data::DatasetStats) -> [usize; 3] {
    [Split::Train, Split::Val, Split::Test].map(|s| stats.splits.get(&s).copied().unwrap_or(0))
}
