//! The `filternet` command-line interface.
//!
//! Every run is driven by a JSON config document with top-level keys
//! `model`, `train`, `data`, and `eval`; unknown keys are hard errors so
//! typos in experiment files surface immediately. Values resolve as
//! defaults < config file < `--set dotted.path=value` flags. Each run
//! writes a `run.json` next to its outputs containing the fully resolved
//! config, seed, versions, and output digests; pointing `--config` at a
//! `run.json` reproduces the run bit for bit.
//!
//! Exit codes: 0 success, 2 unknown command, 3 bad flag or value, 4
//! data/file errors (missing files, shape or channel mismatches, corrupt
//! checkpoints), 1 anything else. Failures print exactly one
//! machine-parseable line to stderr. The final stdout line of a
//! metric-producing command is always a CSV record, even under `--quiet`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Activation};
use crate::data::{self, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport};
use crate::model::{
    well_conditioned_batch, Ablation, FilterKind, FilterNet, LossModel, ModelConfig,
};
use crate::train::{self, TrainConfig};

// ---------------------------------------------------------------------------
// Config document
// ---------------------------------------------------------------------------

fn d_lookback() -> usize {
    96
}
fn d_horizon() -> usize {
    96
}
fn d_kind() -> FilterKind {
    FilterKind::PaiUni
}
fn d_hidden() -> usize {
    128
}
fn d_weights() -> usize {
    3
}
fn d_activation() -> Activation {
    Activation::Relu
}
fn d_norm_eps() -> f64 {
    1e-5
}
fn d_split() -> [f64; 3] {
    [0.7, 0.2, 0.1]
}
fn d_out_dir() -> String {
    "runs".into()
}

/// `model` section: a [`ModelConfig`] whose channel count may be left to
/// the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "d_lookback")]
    pub lookback: usize,
    #[serde(default = "d_horizon")]
    pub horizon: usize,
    /// Channel count; when null it is read off the dataset.
    #[serde(default)]
    pub channels: Option<usize>,
    #[serde(default = "d_kind")]
    pub filter_kind: FilterKind,
    #[serde(default = "d_hidden")]
    pub ffn_hidden: usize,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(default = "d_weights")]
    pub num_weights: usize,
    #[serde(default = "d_activation")]
    pub activation: Activation,
    #[serde(default = "d_norm_eps")]
    pub norm_epsilon: f64,
    #[serde(default)]
    pub ablation: Ablation,
}

impl Default for ModelSection {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl ModelSection {
    /// Bind to a concrete channel count, erroring when the config pins a
    /// different one.
    pub fn resolve(&self, channels: usize) -> Result<ModelConfig> {
        if let Some(expected) = self.channels {
            if expected != channels {
                return Err(Error::Config(format!(
                    "config expects {expected} channels, dataset has {channels}"
                )));
            }
        }
        let config = ModelConfig {
            lookback: self.lookback,
            horizon: self.horizon,
            channels,
            filter_kind: self.filter_kind,
            ffn_hidden: self.ffn_hidden,
            embed_dim: self.embed_dim,
            num_weights: self.num_weights,
            activation: self.activation,
            norm_epsilon: self.norm_epsilon,
            ablation: self.ablation,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV dataset path.
    #[serde(default)]
    pub path: Option<String>,
    /// Chronological train/val/test ratios.
    #[serde(default = "d_split")]
    pub split: [f64; 3],
    /// Explicit `[start, end)` row borders for train/val/test; overrides
    /// `split` when set (fixed benchmark protocols pin rows, not ratios).
    #[serde(default)]
    pub borders: Option<[[usize; 2]; 3]>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { path: None, split: d_split(), borders: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Directory for checkpoints, exports, and run metadata.
    #[serde(default = "d_out_dir")]
    pub out_dir: String,
    /// Dataset label used in reports; defaults to the file stem.
    #[serde(default)]
    pub dataset_name: Option<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { out_dir: d_out_dir(), dataset_name: None }
    }
}

/// The whole config document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainConfig,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn split_spec(&self) -> data::SplitSpec {
        match self.data.borders {
            Some(borders) => data::SplitSpec::Borders(borders),
            None => data::SplitSpec::Ratios((
                self.data.split[0],
                self.data.split[1],
                self.data.split[2],
            )),
        }
    }

    pub fn dataset_label(&self) -> String {
        if let Some(name) = &self.eval.dataset_name {
            return name.clone();
        }
        self.data
            .path
            .as_deref()
            .map(|p| {
                Path::new(p)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.to_string())
            })
            .unwrap_or_else(|| "dataset".into())
    }
}

/// Load a config document, apply dotted-path overrides, and deserialize
/// with unknown-key rejection. A `run.json` produced by an earlier run is
/// accepted directly (its embedded resolved config is used).
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut doc: serde_json::Value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("config '{}': {e}", p.display())))?
        }
        None => serde_json::json!({}),
    };
    // run.json wrapper: {"command": ..., "config": {...}, ...}
    if doc.get("config").is_some() && doc.get("command").is_some() {
        doc = doc.get("config").cloned().unwrap();
    }
    for set in sets {
        apply_set(&mut doc, set)?;
    }
    serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))
}

/// Apply one `dotted.path=value` override onto the JSON document. The
/// value is parsed as JSON when possible and falls back to a string.
fn apply_set(doc: &mut serde_json::Value, set: &str) -> Result<()> {
    let Some((path, raw)) = set.split_once('=') else {
        return Err(Error::Config(format!("--set needs key=value, got '{set}'")));
    };
    let value: serde_json::Value =
        serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            return Err(Error::Config(format!("--set path '{path}' crosses a non-object")));
        }
        let map = node.as_object_mut().unwrap();
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| serde_json::json!({}));
    }
    Err(Error::Config(format!("empty --set path in '{set}'")))
}

// ---------------------------------------------------------------------------
// Command-line surface
// ---------------------------------------------------------------------------

#[derive(Parser, Debug)]
#[command(
    name = "filternet",
    version,
    about = "Frequency-filter time series forecasting",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config file (or a run.json from a previous run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value by dotted path, e.g. train.learning_rate=0.005.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Suppress progress output (the final CSV metric line still prints).
    #[arg(long)]
    quiet: bool,
    /// Worker threads for evaluation fan-out and grid search.
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        load_config(self.config.as_deref(), &self.sets)
    }

    fn threads(&self) -> usize {
        self.threads.unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and report validation metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint output path (default: <out_dir>/model.fltn).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Grid-search learning rate and batch size instead of a single run.
        #[arg(long)]
        grid: bool,
    },
    /// Evaluate a checkpoint on a dataset's test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset CSV (defaults to the config's data.path).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Lookback length; must match the checkpoint.
        #[arg(long)]
        lookback: Option<usize>,
        /// Horizon length; must match the checkpoint.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Export one test window's forecast as CSV.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Test-window index.
        #[arg(long, default_value_t = 0)]
        window: usize,
        #[arg(long, default_value_t = 0)]
        channel: usize,
        /// Report values in the dataset's original units.
        #[arg(long)]
        raw_scale: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic series as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = ["multifreq", "trend", "multiperiod"])]
        kind: String,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// Comma-separated periods for multifreq/multiperiod.
        #[arg(long, value_delimiter = ',')]
        periods: Vec<f64>,
        /// Comma-separated amplitudes for multifreq.
        #[arg(long, value_delimiter = ',')]
        amplitudes: Vec<f64>,
        /// Slope for the trend generator.
        #[arg(long, default_value_t = 0.01)]
        slope: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a checkpoint's learned frequency response.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write a minimal SVG amplitude plot.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Channel whose filter to export (channel-unique filters only).
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Finite-difference check of every parameter group's gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate the structural ablations side by side.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

// ---------------------------------------------------------------------------
// Run metadata
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config: &'a RunConfig,
    seed: u64,
    rng: &'a str,
    versions: std::collections::BTreeMap<&'a str, String>,
    /// Digests of every file this run wrote, keyed by path.
    outputs: std::collections::BTreeMap<String, String>,
}

fn write_run_meta(
    command: &str,
    config: &RunConfig,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let out_dir = Path::new(&config.eval.out_dir);
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let mut digests = std::collections::BTreeMap::new();
    for path in outputs {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        digests.insert(
            path.display().to_string(),
            format!("fnv64:{:016x}", train::fnv1a64(&bytes)),
        );
    }
    let mut versions = std::collections::BTreeMap::new();
    versions.insert("filternet", env!("CARGO_PKG_VERSION").to_string());
    versions.insert("checkpoint_format", "1".to_string());
    let meta = RunMeta {
        command,
        config,
        seed: config.train.seed,
        rng: crate::RNG_ID,
        versions,
        outputs: digests,
    };
    let path = out_dir.join("run.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Command bodies
// ---------------------------------------------------------------------------

fn load_dataset(config: &RunConfig, explicit: Option<&Path>) -> Result<(TimeSeriesFrame, String)> {
    let path: PathBuf = match explicit {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(config.data.path.clone().ok_or_else(|| {
            Error::Config("no dataset: set data.path in the config or pass --data".into())
        })?),
    };
    let frame = data::load_csv(&path)?;
    Ok((frame, path.display().to_string()))
}

fn cmd_train(common: &Common, out: Option<&Path>, grid_flag: bool) -> Result<()> {
    let mut config = common.config()?;
    if grid_flag {
        config.train.grid = true;
    }
    let (frame, _) = load_dataset(&config, None)?;
    let model_config = config.model.resolve(frame.channels())?;
    config.model.channels = Some(frame.channels());
    let prepared =
        data::prepare_spec(&frame, &config.split_spec(), model_config.lookback, model_config.horizon)?;

    let (ckpt, cells) = if config.train.grid {
        let (ckpt, cells) = train::grid_search(&model_config, &prepared, &config.train, common.threads())?;
        (ckpt, Some(cells))
    } else {
        let (ckpt, history) = train::train_model(&model_config, &prepared, &config.train)?;
        if !common.quiet {
            for e in &history.epochs {
                println!("epoch {:>3}: train {:.6} val {:.6}", e.epoch, e.train_mse, e.val_mse);
            }
        }
        (ckpt, None)
    };
    if let (Some(cells), false) = (&cells, common.quiet) {
        println!("learning_rate,batch_size,val_mse,epochs");
        for c in cells {
            println!("{},{},{:.6},{}", c.learning_rate, c.batch_size, c.val_mse, c.epochs_run);
        }
    }

    let out_dir = PathBuf::from(&config.eval.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let ckpt_path = out.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("model.fltn"));
    train::save_checkpoint(&ckpt_path, &ckpt)?;

    let report = eval::evaluate(
        &ckpt,
        &frame,
        &prepared.splits.val,
        model_config.lookback,
        model_config.horizon,
        &config.dataset_label(),
        common.threads(),
    )?;
    if !common.quiet {
        println!("checkpoint: {}", ckpt_path.display());
        println!("{report}");
        println!("{}", EvalReport::csv_header());
    }
    write_run_meta("train", &config, &[ckpt_path])?;
    println!("{}", report.csv_row());
    Ok(())
}

fn cmd_evaluate(
    common: &Common,
    checkpoint: &Path,
    data_path: Option<&Path>,
    lookback: Option<usize>,
    horizon: Option<usize>,
) -> Result<()> {
    let mut config = common.config()?;
    let ckpt = train::load_checkpoint(checkpoint)?;
    let (frame, _) = load_dataset(&config, data_path)?;
    if frame.channels() != ckpt.config.channels {
        return Err(Error::Config(format!(
            "channel count mismatch: checkpoint expects {}, dataset has {}",
            ckpt.config.channels,
            frame.channels()
        )));
    }
    config.model.channels = Some(frame.channels());
    let lookback = lookback.unwrap_or(ckpt.config.lookback);
    let horizon = horizon.unwrap_or(ckpt.config.horizon);
    let splits = config.split_spec().resolve(frame.rows())?;
    let report = eval::evaluate(
        &ckpt,
        &frame,
        &splits.test,
        lookback,
        horizon,
        &config.dataset_label(),
        common.threads(),
    )?;
    if !common.quiet {
        println!("{report}");
        println!("{}", EvalReport::csv_header());
    }
    write_run_meta("evaluate", &config, &[])?;
    println!("{}", report.csv_row());
    Ok(())
}

fn cmd_predict(
    common: &Common,
    checkpoint: &Path,
    data_path: Option<&Path>,
    window: usize,
    channel: usize,
    raw_scale: bool,
    out: &Path,
) -> Result<()> {
    let config = common.config()?;
    let ckpt = train::load_checkpoint(checkpoint)?;
    let (frame, _) = load_dataset(&config, data_path)?;
    let splits = config.split_spec().resolve(frame.rows())?;
    let mut buf = Vec::new();
    eval::prediction_export(&ckpt, &frame, &splits.test, window, channel, raw_scale, &mut buf)?;
    std::fs::write(out, &buf).map_err(|e| Error::io(out.display().to_string(), e))?;
    write_run_meta("predict", &config, &[out.to_path_buf()])?;
    let rows = ckpt.config.lookback + ckpt.config.horizon;
    println!("{},{},{}", out.display(), rows, channel);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    common: &Common,
    kind: &str,
    steps: usize,
    periods: &[f64],
    amplitudes: &[f64],
    slope: f64,
    noise_std: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let config = common.config()?;
    let seed = seed.unwrap_or(config.train.seed);
    let frame = match kind {
        "multifreq" => {
            let periods: Vec<f64> = if periods.is_empty() {
                data::DEFAULT_MULTIFREQ_PERIODS.to_vec()
            } else {
                periods.to_vec()
            };
            let amplitudes: Vec<f64> = if amplitudes.is_empty() {
                vec![1.0; periods.len()]
            } else {
                amplitudes.to_vec()
            };
            data::synth_multifreq(steps, &periods, &amplitudes, seed)?
        }
        "trend" => data::synth_trend_noise(steps, slope, noise_std, seed)?,
        "multiperiod" => {
            let periods: Vec<f64> =
                if periods.is_empty() { vec![96.0, 24.0] } else { periods.to_vec() };
            data::synth_multiperiod_noise(steps, &periods, noise_std, seed)?
        }
        other => return Err(Error::Config(format!("unknown synth kind '{other}'"))),
    };
    data::save_csv(&frame, out)?;
    write_run_meta("synth", &config, &[out.to_path_buf()])?;
    println!("{},{},{}", out.display(), frame.rows(), frame.channels());
    Ok(())
}

fn cmd_spectrum(
    common: &Common,
    checkpoint: &Path,
    out: &Path,
    svg: Option<&Path>,
    channel: usize,
) -> Result<()> {
    let config = common.config()?;
    let ckpt = train::load_checkpoint(checkpoint)?;
    let mut csv = Vec::new();
    let mut svg_buf = Vec::new();
    let svg_writer: Option<&mut dyn std::io::Write> =
        if svg.is_some() { Some(&mut svg_buf) } else { None };
    eval::filter_spectrum_export(&ckpt, channel, &mut csv, svg_writer)?;
    std::fs::write(out, &csv).map_err(|e| Error::io(out.display().to_string(), e))?;
    let mut outputs = vec![out.to_path_buf()];
    if let Some(svg_path) = svg {
        std::fs::write(svg_path, &svg_buf).map_err(|e| Error::io(svg_path.display().to_string(), e))?;
        outputs.push(svg_path.to_path_buf());
    }
    write_run_meta("spectrum", &config, &outputs)?;
    let rows = csv.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
    println!("{},{}", out.display(), rows);
    Ok(())
}

fn cmd_gradcheck(common: &Common) -> Result<()> {
    let config = common.config()?;
    let channels = config.model.channels.unwrap_or(1);
    let mut section = config.model.clone();
    section.channels = Some(channels);
    let model_config = section.resolve(channels)?;
    let net = FilterNet::init(model_config, config.train.seed)?;
    let (x, y) = well_conditioned_batch(&net, 2, config.train.seed ^ 0x9e37_79b9)?;
    let mut lm = LossModel::new(net, x, y);
    let report = grad_check(&mut lm, 1e-5)?;
    if !common.quiet {
        println!("group,rel_err");
        for (name, err) in &report.groups {
            println!("{name},{err:.3e}");
        }
    }
    write_run_meta("gradcheck", &config, &[])?;
    println!("max_rel_err,{:.6e}", report.max_rel_err());
    Ok(())
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let config = common.config()?;
    let (frame, _) = load_dataset(&config, None)?;
    let model_config = config.model.resolve(frame.channels())?;
    let table = eval::ablation_suite(
        &frame,
        &model_config,
        &config.train,
        &config.split_spec(),
        &config.dataset_label(),
        common.threads(),
    )?;
    let out_dir = PathBuf::from(&config.eval.out_dir);
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let csv_path = out_dir.join("ablation.csv");
    let mut file = Vec::new();
    writeln!(file, "variant,{}", EvalReport::csv_header()).unwrap();
    for (variant, report) in &table {
        writeln!(file, "{variant:?},{}", report.csv_row()).unwrap();
    }
    std::fs::write(&csv_path, &file).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    write_run_meta("ablate", &config, &[csv_path])?;
    print!("{}", String::from_utf8(file).expect("csv is utf-8"));
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn error_kind(err: &Error) -> (&'static str, i32) {
    match err {
        Error::Io { .. } if err.is_missing_file() => ("missing-file", 4),
        Error::Io { .. } => ("io", 4),
        Error::Parse { .. } => ("parse", 4),
        Error::Shape(_) => ("shape", 4),
        Error::Config(_) => ("config", 4),
        Error::Checkpoint(_) => ("checkpoint", 4),
        Error::NonFinite(_) => ("non-finite", 1),
    }
}

/// Parse the command line and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ClapErrorKind::DisplayHelp
                | ClapErrorKind::DisplayVersion
                | ClapErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    print!("{e}");
                    0
                }
                ClapErrorKind::InvalidSubcommand => {
                    eprintln!("error: code=2 kind=unknown-command msg=\"{}\"", one_line(&e));
                    2
                }
                _ => {
                    eprintln!("error: code=3 kind=bad-flag msg=\"{}\"", one_line(&e));
                    3
                }
            };
        }
    };
    let outcome = match &cli.command {
        Command::Train { common, out, grid } => cmd_train(common, out.as_deref(), *grid),
        Command::Evaluate { common, checkpoint, data, lookback, horizon } => {
            cmd_evaluate(common, checkpoint, data.as_deref(), *lookback, *horizon)
        }
        Command::Predict { common, checkpoint, data, window, channel, raw_scale, out } => {
            cmd_predict(common, checkpoint, data.as_deref(), *window, *channel, *raw_scale, out)
        }
        Command::Synth { common, kind, steps, periods, amplitudes, slope, noise_std, seed, out } => {
            cmd_synth(common, kind, *steps, periods, amplitudes, *slope, *noise_std, *seed, out)
        }
        Command::Spectrum { common, checkpoint, out, svg, channel } => {
            cmd_spectrum(common, checkpoint, out, svg.as_deref(), *channel)
        }
        Command::Gradcheck { common } => cmd_gradcheck(common),
        Command::Ablate { common } => cmd_ablate(common),
    };
    match outcome {
        Ok(()) => 0,
        Err(err) => {
            let (kind, code) = error_kind(&err);
            eprintln!("error: code={code} kind={kind} msg=\"{}\"", one_line(&err));
            code
        }
    }
}

fn one_line(err: &impl std::fmt::Display) -> String {
    err.to_string().replace('\n', " ").trim().to_string()
}
