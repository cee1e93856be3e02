//! The `comet` command line: argument parsing, config resolution, run
//! manifests and the workflow subcommands.
//!
//! Exit codes: 0 success, 1 config or data error, 2 usage error, 3 numeric
//! failure (non-finite loss, failed gradient check).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::diagnostics::{analyze, fit_scaling, Analysis};
use crate::error::{invalid, io_err, Error, Result};
use crate::model::{Checkpoint, ModelConfig};
use crate::probe::{run_probe, ProbeConfig};
use crate::signals::{
    preprocess, synth_downstream, synth_eeg, Dataset, DownstreamConfig, PreprocessConfig,
    SynthConfig,
};
use crate::train::{check_total_loss, GradCheckConfig, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable consulted when `--seed` is absent.
pub const SEED_ENV: &str = "COMET_SEED";
pub const RUN_MANIFEST: &str = "run_manifest.json";
/// Largest relative gradient error accepted by `gradcheck`.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "comet", version, about = "Self-supervised EEG pre-training at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic EEG dataset.
    Synth(SynthArgs),
    /// Band-pass, resample, segment and rescale a dataset.
    Preprocess(PreprocessArgs),
    /// Pre-train an encoder on an unlabelled dataset.
    Pretrain(PretrainArgs),
    /// Linearly probe a frozen encoder on a labelled dataset.
    Probe(ProbeArgs),
    /// Emit attention and embedding diagnostics of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Compare total-loss gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed, falling back to $COMET_SEED, then the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replace existing outputs.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long)]
    pub seconds: Option<f64>,
    /// Number of samples (unlabelled data only).
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    #[arg(long)]
    pub mixing_scale: Option<f64>,
    /// Generate the labelled downstream task instead.
    #[arg(long)]
    pub downstream: bool,
    #[arg(long, requires = "downstream")]
    pub classes: Option<usize>,
    #[arg(long, requires = "downstream")]
    pub per_class: Option<usize>,
    #[arg(long, requires = "downstream")]
    pub separation: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lo_hz: Option<f64>,
    #[arg(long)]
    pub hi_hz: Option<f64>,
    #[arg(long)]
    pub fs_out: Option<f64>,
    #[arg(long)]
    pub window: Option<f64>,
    #[arg(long)]
    pub hop: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Threads used for per-sample work; results do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Labelled training data.
    #[arg(long)]
    pub data: PathBuf,
    /// Labelled test data; without it a stratified share of `--data` is held out.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub include_global: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub clusters: usize,
    /// Attention is averaged over at most this many samples.
    #[arg(long, default_value_t = 64)]
    pub max_samples: usize,
    /// JSON list of `[x, y]` pairs for the log-linear scaling fit.
    #[arg(long)]
    pub scaling_points: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Gradcheck, training or model config (detected from its keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds to check.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Check at most this many coordinates per seed (0 = all).
    #[arg(long)]
    pub max_coords: Option<usize>,
    /// Optional JSON report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

/// Record written before any output of a run.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub build: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) | Error::Diff(_) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

/// Parses `argv` and runs the chosen subcommand, returning the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Probe(a) => probe(a),
        Command::Analyze(a) => analyze_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// `--seed`, else `$COMET_SEED`, else `None`.
pub fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Reads a JSON config, reporting the path of the offending field.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn parse_config<T: DeserializeOwned>(text: &str) -> std::result::Result<T, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        format!("field `{path}`: {}", e.into_inner())
    })
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

/// SHA-256 of a file, hex encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digests(paths: &[PathBuf]) -> Result<Vec<InputDigest>> {
    paths
        .iter()
        .filter(|p| p.is_file())
        .map(|p| {
            Ok(InputDigest {
                path: p.clone(),
                sha256: file_digest(p)?,
            })
        })
        .collect()
}

fn dataset_files(dir: &Path) -> Vec<PathBuf> {
    ["manifest.json", "data.bin", "labels.bin"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

fn checkpoint_files(path: &Path) -> Vec<PathBuf> {
    let dir = if path.is_file() {
        path.parent().unwrap_or(Path::new(".")).to_path_buf()
    } else {
        path.to_path_buf()
    };
    [crate::model::MANIFEST_FILE, crate::model::PARAMS_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

/// Fails when `dir` already holds anything, unless `force`.
pub fn claim_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.is_file() {
        return Err(invalid(format!("{} exists and is a file", dir.display())));
    }
    let occupied = dir.is_dir()
        && fs::read_dir(dir)
            .map_err(io_err(dir))?
            .next()
            .is_some();
    if occupied && !force {
        return Err(invalid(format!(
            "{} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Fails when `file` exists, unless `force`.
pub fn claim_file(file: &Path, force: bool) -> Result<()> {
    if file.exists() && !force {
        return Err(invalid(format!(
            "{} exists; pass --force to overwrite",
            file.display()
        )));
    }
    if let Some(parent) = file.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    Ok(())
}

/// Manifest path for a single-file output: `<stem>.manifest.json`.
fn manifest_beside(file: &Path) -> PathBuf {
    let stem = file.file_stem().map_or("run".into(), |s| s.to_string_lossy());
    file.with_file_name(format!("{stem}.manifest.json"))
}

fn write_manifest(
    path: &Path,
    subcommand: &str,
    config: &impl Serialize,
    seed: Option<u64>,
    inputs: &[PathBuf],
    outputs: Vec<PathBuf>,
) -> Result<()> {
    let m = RunManifest {
        subcommand: subcommand.into(),
        config: serde_json::to_value(config)?,
        seed,
        build: format!("comet {}", env!("CARGO_PKG_VERSION")),
        inputs: digests(inputs)?,
        outputs,
    };
    write_json(path, &m)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.common.seed)?;
    let config_path = a.common.config.as_deref();
    let overrides = |base: &mut SynthConfig| {
        if let Some(v) = a.channels {
            base.n_channels = v;
        }
        if let Some(v) = a.fs {
            base.fs = v;
        }
        if let Some(v) = a.seconds {
            base.duration_s = v;
        }
        if let Some(v) = a.mixing_scale {
            base.mixing_scale = v;
        }
        if let Some(s) = seed {
            base.seed = s;
        }
    };
    let mut inputs: Vec<PathBuf> = config_path.into_iter().map(Path::to_path_buf).collect();
    claim_dir(&a.out, a.common.force)?;
    let outputs = dataset_files(&a.out);
    if a.downstream {
        let mut cfg: DownstreamConfig = config_or_default(config_path)?;
        overrides(&mut cfg.base);
        if let Some(v) = a.classes {
            cfg.n_classes = v;
        }
        if let Some(v) = a.per_class {
            cfg.n_per_class = v;
        }
        if let Some(v) = a.separation {
            cfg.separation = v;
        }
        cfg.base.validate()?;
        write_manifest(&a.out.join(RUN_MANIFEST), "synth", &cfg, Some(cfg.base.seed), &inputs, outputs)?;
        let (samples, labels) = synth_downstream(&cfg)?;
        let data = Dataset::new(samples, Some(labels))?
            .with_provenance(Some(cfg.base.seed), "synthetic downstream task");
        data.write(&a.out)?;
        println!("wrote {} labelled samples to {}", data.len(), a.out.display());
    } else {
        let mut cfg: SynthConfig = config_or_default(config_path)?;
        overrides(&mut cfg);
        cfg.validate()?;
        inputs.retain(|p| p.is_file());
        write_manifest(&a.out.join(RUN_MANIFEST), "synth", &serde_json::json!({ "synth": cfg, "n": a.n }), Some(cfg.seed), &inputs, outputs)?;
        let data = Dataset::new(synth_eeg(&cfg, a.n)?, None)?
            .with_provenance(Some(cfg.seed), "synthetic correlated EEG");
        data.write(&a.out)?;
        println!("wrote {} samples to {}", data.len(), a.out.display());
    }
    Ok(())
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<()> {
    let mut cfg: PreprocessConfig = config_or_default(a.common.config.as_deref())?;
    if let Some(v) = a.lo_hz {
        cfg.lo_hz = v;
    }
    if let Some(v) = a.hi_hz {
        cfg.hi_hz = v;
    }
    if let Some(v) = a.fs_out {
        cfg.fs_out = v;
    }
    if let Some(v) = a.window {
        cfg.window_s = v;
    }
    if let Some(v) = a.hop {
        cfg.hop_s = v;
    }
    let input = Dataset::read(&a.data)?;
    claim_dir(&a.out, a.common.force)?;
    let mut inputs = dataset_files(&a.data);
    inputs.extend(a.common.config.clone());
    write_manifest(&a.out.join(RUN_MANIFEST), "preprocess", &cfg, None, &inputs, dataset_files(&a.out))?;
    let mut samples = Vec::new();
    let mut labels = input.labels.as_ref().map(|_| Vec::new());
    for (k, rec) in input.samples.iter().enumerate() {
        let seg = preprocess(rec, &cfg)?;
        if let Some(w) = &seg.warning {
            log::warn!("recording {k}: {w}");
        }
        if let (Some(out), Some(src)) = (labels.as_mut(), input.labels.as_ref()) {
            out.extend(std::iter::repeat_n(src[k], seg.segments.len()));
        }
        samples.extend(seg.segments);
    }
    if samples.is_empty() {
        return Err(Error::Data("no recording was long enough for one window".into()));
    }
    let out = Dataset::new(samples, labels)?
        .with_provenance(input.seed, format!("preprocessed from {}", a.data.display()));
    out.write(&a.out)?;
    println!(
        "{} recordings -> {} windows in {}",
        input.len(),
        out.len(),
        a.out.display()
    );
    Ok(())
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let data = Dataset::read(&a.data)?;
    let seed = resolve_seed(a.common.seed)?;
    let mut inputs = dataset_files(&a.data);
    let mut trainer = match &a.resume {
        Some(ck) => {
            inputs.extend(checkpoint_files(ck));
            if seed.is_some() || a.epochs.is_some() || a.batch_size.is_some() {
                return Err(invalid("--resume keeps the original seed, epochs and batch size"));
            }
            let mut t = Trainer::resume(Checkpoint::load(ck)?, &data)?;
            if let Some(w) = a.workers {
                t.set_workers(w)?;
            }
            t
        }
        None => {
            let mut cfg: TrainConfig = config_or_default(a.common.config.as_deref())?;
            inputs.extend(a.common.config.clone());
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = a.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.workers {
                cfg.workers = v;
            }
            Trainer::new(cfg, &data)?
        }
    };
    claim_dir(&a.out, a.common.force)?;
    let outputs = ["best", "final", "train_log.csv", "epochs.csv"]
        .iter()
        .map(|f| a.out.join(f))
        .collect();
    write_manifest(&a.out.join(RUN_MANIFEST), "pretrain", &trainer.cfg, Some(trainer.cfg.seed), &inputs, outputs)?;
    println!(
        "{} trainable parameters, {} steps ({} per epoch), {} train / {} validation samples",
        trainer.state.n_trainable(),
        trainer.total_steps(),
        trainer.steps_per_epoch(),
        trainer.train_ids().len(),
        trainer.val_ids().len()
    );
    let log = trainer.run(&data, Some(&a.out))?;
    for e in &log.epochs {
        println!(
            "epoch {:>3}  L_R {:.4}  L_C {:.4}  total {:.4}{}",
            e.epoch + 1,
            e.recon,
            e.contrastive,
            e.total,
            e.val.map_or(String::new(), |v| format!("  val {:.4}", v.total))
        );
    }
    println!("done in {:.1}s; outputs in {}", log.wall_time_s, a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport<'a> {
    metrics: &'a crate::probe::MetricReport,
    train_metrics: &'a crate::probe::MetricReport,
    fit: &'a crate::probe::ProbeFit,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    encoder_checksum: &'a str,
    config: &'a ProbeConfig,
}

fn probe(a: ProbeArgs) -> Result<()> {
    let mut cfg: ProbeConfig = config_or_default(a.common.config.as_deref())?;
    if let Some(s) = resolve_seed(a.common.seed)? {
        cfg.seed = s;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if a.include_global {
        cfg.include_global = true;
    }
    cfg.validate()?;
    let state = Checkpoint::load(&a.checkpoint)?.state;
    let train = Dataset::read(&a.data)?;
    let test = a.test.as_deref().map(Dataset::read).transpose()?;
    claim_file(&a.out, a.common.force)?;
    let mut inputs = checkpoint_files(&a.checkpoint);
    inputs.extend(dataset_files(&a.data));
    if let Some(t) = &a.test {
        inputs.extend(dataset_files(t));
    }
    inputs.extend(a.common.config.clone());
    write_manifest(&manifest_beside(&a.out), "probe", &cfg, Some(cfg.seed), &inputs, vec![a.out.clone()])?;
    let outcome = run_probe(&state, &train, test.as_ref(), &cfg)?;
    let report = ProbeReport {
        metrics: &outcome.test,
        train_metrics: &outcome.train,
        fit: &outcome.fit,
        n_train: outcome.n_train,
        n_val: outcome.n_val,
        n_test: outcome.n_test,
        encoder_checksum: &outcome.encoder_checksum,
        config: &cfg,
    };
    write_json(&a.out, &report)?;
    let m = &outcome.test;
    println!(
        "test: balanced accuracy {:.4}, kappa {:.4}, weighted F1 {:.4}{}",
        m.balanced_accuracy,
        m.kappa,
        m.weighted_f1,
        m.auroc.map_or(String::new(), |v| format!(", AUROC {v:.4}"))
    );
    Ok(())
}

/// `layer,head,mean_distance`; head is an index, `mean` (mean over heads)
/// or `head_avg` (distance of the head-averaged attention).
pub fn distance_csv(a: &Analysis) -> String {
    let mut s = String::from("layer,head,mean_distance\n");
    let d = &a.distance;
    for (l, heads) in d.per_head.iter().enumerate() {
        for (h, v) in heads.iter().enumerate() {
            s += &format!("{l},{h},{v}\n");
        }
        s += &format!("{l},mean,{}\n", d.per_layer[l]);
        s += &format!("{l},head_avg,{}\n", d.head_averaged[l]);
    }
    s
}

/// `layer,nmi,nmi_head_avg,degenerate_heads`; `nmi` averages per-head values.
pub fn nmi_csv(a: &Analysis) -> String {
    let mut s = String::from("layer,nmi,nmi_head_avg,degenerate_heads\n");
    let r = &a.nmi;
    for l in 0..r.stats.per_layer.len() {
        let flagged = r.degenerate[l].iter().filter(|&&f| f).count();
        s += &format!(
            "{l},{},{},{flagged}\n",
            r.stats.per_layer[l], r.stats.head_averaged[l]
        );
    }
    s
}

pub fn similarity_csv(a: &Analysis) -> String {
    let mut s = format!("channel,{}\n", a.channels.join(","));
    for (name, row) in a.channels.iter().zip(&a.similarity.similarity) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s += &format!("{name},{}\n", cells.join(","));
    }
    s
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    if a.max_samples == 0 {
        return Err(invalid("--max-samples must be positive"));
    }
    let state = Checkpoint::load(&a.checkpoint)?.state;
    let data = Dataset::read(&a.data)?;
    let points: Option<Vec<(f64, f64)>> = a.scaling_points.as_deref().map(read_config).transpose()?;
    claim_dir(&a.out, a.force)?;
    let names = [
        "attention_distance.csv",
        "nmi.csv",
        "channel_similarity.csv",
        "clusters.json",
        "scaling_fit.json",
    ];
    let mut inputs = checkpoint_files(&a.checkpoint);
    inputs.extend(dataset_files(&a.data));
    inputs.extend(a.scaling_points.clone());
    let echo = serde_json::json!({ "clusters": a.clusters, "max_samples": a.max_samples });
    write_manifest(&a.out.join(RUN_MANIFEST), "analyze", &echo, None, &inputs, names.iter().map(|n| a.out.join(n)).collect())?;
    let take = data.len().min(a.max_samples);
    let result = analyze(&state, &data.samples[..take], a.clusters)?;
    write_text(&a.out.join(names[0]), &distance_csv(&result))?;
    write_text(&a.out.join(names[1]), &nmi_csv(&result))?;
    write_text(&a.out.join(names[2]), &similarity_csv(&result))?;
    write_json(
        &a.out.join(names[3]),
        &serde_json::json!({
            "channels": result.channels,
            "n_clusters": a.clusters,
            "assignment": result.similarity.assignment,
            "merges": result.similarity.merges,
        }),
    )?;
    let scaling = match &points {
        Some(p) => {
            let fit = fit_scaling(p)?;
            serde_json::json!({ "model": "y = a*ln(x) + b", "fit": fit, "points": p })
        }
        None => serde_json::json!({ "model": "y = a*ln(x) + b", "fit": null, "points": [] }),
    };
    write_json(&a.out.join(names[4]), &scaling)?;
    for (l, d) in result.distance.per_layer.iter().enumerate() {
        println!(
            "layer {l}: mean attention distance {d:.4}, NMI {:.4}",
            result.nmi.stats.per_layer[l]
        );
    }
    println!("wrote diagnostics for {take} samples to {}", a.out.display());
    Ok(())
}

/// Reads a gradcheck config from a gradcheck, training or bare model config.
pub fn gradcheck_config(path: &Path) -> Result<GradCheckConfig> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let keys = value
        .as_object()
        .ok_or_else(|| invalid(format!("{}: expected a JSON object", path.display())))?;
    let wrap = |e: String| invalid(format!("{}: {e}", path.display()));
    if keys.contains_key("d_model") {
        let model: ModelConfig = parse_config(&text).map_err(wrap)?;
        return Ok(GradCheckConfig {
            model,
            ..Default::default()
        });
    }
    let training = ["epochs", "peak_lr", "weight_decay_end", "momentum_start"];
    if training.iter().any(|k| keys.contains_key(*k)) {
        let t: TrainConfig = parse_config(&text).map_err(wrap)?;
        return Ok(GradCheckConfig {
            tau: t.tau,
            lambda: t.lambda,
            model: t.model,
            ..Default::default()
        });
    }
    parse_config(&text).map_err(wrap)
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => gradcheck_config(p)?,
        None => GradCheckConfig::default(),
    };
    if let Some(v) = a.max_coords {
        cfg.max_coords = v;
    }
    if a.seeds == 0 {
        return Err(invalid("--seeds must be positive"));
    }
    let base = resolve_seed(a.seed)?.unwrap_or(0);
    if let Some(out) = &a.out {
        claim_file(out, a.force)?;
        let inputs: Vec<PathBuf> = a.config.iter().cloned().collect();
        write_manifest(&manifest_beside(out), "gradcheck", &cfg, Some(base), &inputs, vec![out.clone()])?;
    }
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for seed in base..base + a.seeds {
        let r = check_total_loss(&cfg, seed)?;
        println!(
            "seed {seed}: max relative error {:.3e} over {} coordinates",
            r.max_rel_error, r.checked
        );
        worst = worst.max(r.max_rel_error);
        rows.push(serde_json::json!({
            "seed": seed,
            "max_rel_error": r.max_rel_error,
            "checked": r.checked,
            "analytic": r.analytic,
            "numeric": r.numeric,
        }));
    }
    println!("max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:.0e})");
    if let Some(out) = &a.out {
        write_json(
            out,
            &serde_json::json!({ "max_rel_error": worst, "tolerance": GRADCHECK_TOLERANCE, "seeds": rows }),
        )?;
    }
    if worst >= GRADCHECK_TOLERANCE {
        return Err(Error::Numeric(format!(
            "gradient check failed: {worst:.3e} ≥ {GRADCHECK_TOLERANCE:.0e}"
        )));
    }
    Ok(())
}
