//! MSE training with Adam, early stopping on validation loss, grid
//! search, and checkpoint serialization.

use std::io::Read;
use std::ops::Range;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Tensor};
use crate::data::{gather_batch, window_starts, PreparedData, Scaler, TimeSeriesFrame};
use crate::error::{Error, Result};
use crate::model::{FilterNet, ModelConfig, ModelParams, Workspace};

// ---------------------------------------------------------------------------
// Losses and metrics
// ---------------------------------------------------------------------------

/// Mean squared error over every element.
pub fn mse_loss(yhat: &Tensor, y: &Tensor) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(Error::Shape(format!("mse: {:?} vs {:?}", yhat.shape(), y.shape())));
    }
    let n = yhat.len() as f64;
    Ok(yhat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// Mean absolute error over every element.
pub fn mae_metric(yhat: &Tensor, y: &Tensor) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(Error::Shape(format!("mae: {:?} vs {:?}", yhat.shape(), y.shape())));
    }
    let n = yhat.len() as f64;
    Ok(yhat.data().iter().zip(y.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / n)
}

/// Gradient of [`mse_loss`] with respect to the prediction:
/// `2 (yhat - y) / count`.
pub fn mse_grad(yhat: &Tensor, y: &Tensor) -> Result<Tensor> {
    if yhat.shape() != y.shape() {
        return Err(Error::Shape(format!("mse grad: {:?} vs {:?}", yhat.shape(), y.shape())));
    }
    let scale = 2.0 / yhat.len() as f64;
    let data = yhat.data().iter().zip(y.data()).map(|(a, b)| scale * (a - b)).collect();
    Tensor::from_vec(yhat.shape(), data)
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

fn default_lr() -> f64 {
    1e-3
}
fn default_batch() -> usize {
    16
}
fn default_epochs() -> usize {
    30
}
fn default_patience() -> usize {
    5
}
fn default_seed() -> u64 {
    crate::DEFAULT_SEED
}
fn default_lr_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.001, 0.005, 0.0001, 0.0005]
}
fn default_batch_grid() -> Vec<usize> {
    vec![4, 8, 16, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    /// Number of consecutive epochs without a validation improvement
    /// tolerated before stopping; 0 stops after the first epoch.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Learning-rate candidates for grid search.
    #[serde(default = "default_lr_grid")]
    pub lr_grid: Vec<f64>,
    /// Batch-size candidates for grid search.
    #[serde(default = "default_batch_grid")]
    pub batch_grid: Vec<usize>,
    /// Optional global-norm gradient clip, for divergence debugging only.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    /// Run the full (lr x batch) grid instead of a single configuration.
    #[serde(default)]
    pub grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: default_seed(),
            lr_grid: default_lr_grid(),
            batch_grid: default_batch_grid(),
            grad_clip: None,
            grid: false,
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers mirroring the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&Param]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            step: 0,
        }
    }
}

/// One Adam update with bias correction. Rejects non-finite gradients.
pub fn adam_step(
    params: &mut [&mut Param],
    state: &mut AdamState,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::Shape("adam state does not match parameter list".into()));
    }
    for p in params.iter() {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter '{}'", p.name)));
        }
    }
    let scale = match grad_clip {
        Some(max_norm) => {
            let total: f64 = params
                .iter()
                .map(|p| p.grad.data().iter().map(|g| g * g).sum::<f64>())
                .sum();
            let norm = total.sqrt();
            if norm > max_norm {
                max_norm / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let value = p.value.data_mut();
        for ((mv, vv), (pv, &g0)) in m
            .iter_mut()
            .zip(v.iter_mut())
            .zip(value.iter_mut().zip(p.grad.data()))
        {
            let g = g0 * scale;
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * g;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * g * g;
            let mhat = *mv / bias1;
            let vhat = *vv / bias2;
            *pv -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics over a split
// ---------------------------------------------------------------------------

const EVAL_BATCH: usize = 128;

/// Mean MSE/MAE over every window of `range`, plus the window count.
/// Work may fan out over `threads`, but partial sums are always reduced in
/// fixed batch order, so the result is identical for any thread count.
pub fn forecast_metrics(
    net: &FilterNet,
    frame: &TimeSeriesFrame,
    range: &Range<usize>,
    threads: usize,
) -> Result<(f64, f64, usize)> {
    let lookback = net.config.lookback;
    let horizon = net.config.horizon;
    if frame.channels() != net.config.channels {
        return Err(Error::Shape(format!(
            "frame has {} channels, model expects {}",
            frame.channels(),
            net.config.channels
        )));
    }
    let starts = window_starts(range, lookback, horizon, 1)?;
    let batches: Vec<&[usize]> = starts.chunks(EVAL_BATCH).collect();

    let run_batch = |chunk: &[usize]| -> Result<(f64, f64, usize)> {
        let batch = gather_batch(frame, chunk, lookback, horizon)?;
        let yhat = net.forward(&batch.x)?;
        let count = yhat.len();
        let mut sq = 0.0;
        let mut abs = 0.0;
        for (a, b) in yhat.data().iter().zip(batch.y.data()) {
            let d = a - b;
            sq += d * d;
            abs += d.abs();
        }
        Ok((sq, abs, count))
    };

    let partials: Vec<(f64, f64, usize)> = if threads <= 1 || batches.len() <= 1 {
        let mut out = Vec::with_capacity(batches.len());
        for chunk in &batches {
            out.push(run_batch(chunk)?);
        }
        out
    } else {
        let slots: Mutex<Vec<Option<Result<(f64, f64, usize)>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        let next = AtomicUsize::new(0);
        std::thread::scope(|scope| {
            for _ in 0..threads.min(batches.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= batches.len() {
                        break;
                    }
                    let out = run_batch(batches[i]);
                    slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
                });
            }
        });
        slots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_iter()
            .map(|o| o.expect("every batch processed"))
            .collect::<Result<Vec<_>>>()?
    };

    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut count = 0usize;
    for (s, a, c) in partials {
        sq += s;
        abs += a;
        count += c;
    }
    let total = count as f64;
    Ok((sq / total, abs / total, starts.len()))
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

/// Metadata carried inside a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_mse: f64,
    pub seed: u64,
    pub rng: String,
}

/// A trained model plus everything needed to use it: configuration,
/// parameters, and the data scaler it was trained under.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub scaler: Scaler,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn network(&self) -> FilterNet {
        FilterNet::from_parts(self.config.clone(), self.params.clone())
    }

    /// Fail loudly when a checkpoint of one filter kind is used where
    /// another kind is expected.
    pub fn require_kind(&self, kind: crate::model::FilterKind) -> Result<()> {
        if self.config.filter_kind != kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {:?} model, expected {:?}",
                self.config.filter_kind, kind
            )));
        }
        Ok(())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed for epoch-local shuffling, derived deterministically from the run
/// seed.
fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    splitmix64(seed ^ splitmix64(epoch as u64))
}

/// Train on the prepared data's training split, evaluating the validation
/// split after every epoch and keeping the best-validation parameters.
/// Fully deterministic given the seed.
pub fn train_model(
    model_config: &ModelConfig,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, TrainHistory)> {
    model_config.validate()?;
    if cfg.batch_size == 0 || cfg.max_epochs == 0 {
        return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
    }
    if model_config.channels != data.frame.channels() {
        return Err(Error::Config(format!(
            "model expects {} channels, data has {}",
            model_config.channels,
            data.frame.channels()
        )));
    }
    let lookback = model_config.lookback;
    let horizon = model_config.horizon;
    let train_starts = window_starts(&data.splits.train, lookback, horizon, 1)?;
    window_starts(&data.splits.val, lookback, horizon, 1)?;

    let mut net = FilterNet::init(model_config.clone(), cfg.seed)?;
    let mut adam = AdamState::new(&net.params.params());

    let mut history = TrainHistory::default();
    let mut best: Option<(ModelParams, f64, usize)> = None;
    let mut stale_epochs = 0usize;

    let mut order = train_starts.clone();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
        order.shuffle(&mut rng);

        let mut train_sq = 0.0;
        let mut train_count = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = gather_batch(&data.frame, chunk, lookback, horizon)?;
            net.params.zero_grads();
            let mut ws = Workspace::default();
            let yhat = net.forward_cached(&batch.x, &mut ws)?;
            let loss = mse_loss(&yhat, &batch.y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss diverged at epoch {epoch}, step {step}"
                )));
            }
            train_sq += loss * yhat.len() as f64;
            train_count += yhat.len();
            let dyhat = mse_grad(&yhat, &batch.y)?;
            net.backward(&dyhat, &ws)?;
            adam_step(&mut net.params.params_mut(), &mut adam, cfg.learning_rate, cfg.grad_clip)
                .map_err(|e| match e {
                    Error::NonFinite(m) => {
                        Error::NonFinite(format!("{m} at epoch {epoch}, step {step}"))
                    }
                    other => other,
                })?;
        }

        let (val_mse, _, _) = forecast_metrics(&net, &data.frame, &data.splits.val, 1)?;
        history.epochs.push(EpochStats {
            epoch,
            train_mse: train_sq / train_count as f64,
            val_mse,
        });

        let improved = best.as_ref().map_or(true, |(_, b, _)| val_mse < *b);
        if improved {
            best = Some((net.params.clone(), val_mse, epoch));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        if stale_epochs >= cfg.patience {
            break;
        }
    }

    let (params, val_mse, epoch) = best.expect("at least one epoch ran");
    let ckpt = Checkpoint {
        config: model_config.clone(),
        params,
        scaler: data.scaler.clone(),
        meta: CheckpointMeta {
            epoch,
            val_mse,
            seed: cfg.seed,
            rng: crate::RNG_ID.to_string(),
        },
    };
    Ok((ckpt, history))
}

/// One grid-search cell result.
#[derive(Debug, Clone, Serialize)]
pub struct GridCell {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub val_mse: f64,
    pub epochs_run: usize,
}

/// Train every (learning rate, batch size) combination from the config
/// grids, in parallel across `threads` workers, and return the checkpoint
/// with the lowest validation MSE (ties broken by grid order).
pub fn grid_search(
    model_config: &ModelConfig,
    data: &PreparedData,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<(Checkpoint, Vec<GridCell>)> {
    let mut cells: Vec<TrainConfig> = Vec::new();
    for &lr in &cfg.lr_grid {
        for &batch in &cfg.batch_grid {
            let mut c = cfg.clone();
            c.learning_rate = lr;
            c.batch_size = batch;
            cells.push(c);
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }

    type CellOut = Result<(Checkpoint, TrainHistory)>;
    let slots: Mutex<Vec<Option<CellOut>>> = Mutex::new((0..cells.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(cells.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= cells.len() {
                    break;
                }
                let out = train_model(model_config, data, &cells[i]);
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
            });
        }
    });

    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<(usize, Checkpoint, f64)> = None;
    for (i, slot) in slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .enumerate()
    {
        let (ckpt, history) = slot.expect("every cell trained")?;
        table.push(GridCell {
            learning_rate: cells[i].learning_rate,
            batch_size: cells[i].batch_size,
            val_mse: ckpt.meta.val_mse,
            epochs_run: history.epochs.len(),
        });
        let better = best.as_ref().map_or(true, |(_, _, b)| ckpt.meta.val_mse < *b);
        if better {
            let v = ckpt.meta.val_mse;
            best = Some((i, ckpt, v));
        }
    }
    let (_, ckpt, _) = best.expect("grid non-empty");
    Ok((ckpt, table))
}

// ---------------------------------------------------------------------------
// Checkpoint files
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &[u8; 4] = b"FLTN";
const CKPT_VERSION: u32 = 1;

/// 64-bit FNV-1a digest used for checkpoint integrity and run metadata.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Element (not byte) offset into the tensor data section.
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    scaler: Scaler,
    meta: CheckpointMeta,
    manifest: Vec<ManifestEntry>,
}

/// File layout: magic, u32 version, u64 header length, JSON header,
/// little-endian f64 tensor data in manifest order, u64 digest of all
/// preceding bytes.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let params = ckpt.params.params();
    let mut manifest = Vec::with_capacity(params.len());
    let mut offset = 0usize;
    for p in &params {
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            offset,
            len: p.value.len(),
        });
        offset += p.value.len();
    }
    let header = CheckpointHeader {
        config: ckpt.config.clone(),
        scaler: ckpt.scaler.clone(),
        meta: ckpt.meta.clone(),
        manifest,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(format!("header encode: {e}")))?;

    let mut bytes = Vec::with_capacity(4 + 4 + 8 + header_json.len() + offset * 8 + 8);
    bytes.extend_from_slice(CKPT_MAGIC);
    bytes.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for p in &params {
        for v in p.value.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = fnv1a64(&bytes);
    bytes.extend_from_slice(&digest.to_le_bytes());
    std::fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if bytes.len() < 4 + 4 + 8 + 8 {
        return Err(Error::Checkpoint("file truncated (shorter than fixed fields)".into()));
    }
    if &bytes[..4] != CKPT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version} is not supported (expected {CKPT_VERSION})"
        )));
    }
    let body_len = bytes.len() - 8;
    let stored_digest = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if fnv1a64(&bytes[..body_len]) != stored_digest {
        return Err(Error::Checkpoint("digest mismatch (file corrupted)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if header_end > body_len {
        return Err(Error::Checkpoint("file truncated (header overruns data)".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;

    let data_bytes = &bytes[header_end..body_len];
    let total_elems: usize = header.manifest.iter().map(|m| m.len).sum();
    if data_bytes.len() != total_elems * 8 {
        return Err(Error::Checkpoint(format!(
            "tensor section holds {} bytes, manifest wants {}",
            data_bytes.len(),
            total_elems * 8
        )));
    }

    let mut params = ModelParams::init(&header.config, 0)?;
    for p in params.params_mut() {
        let entry = header
            .manifest
            .iter()
            .find(|m| m.name == p.name)
            .ok_or_else(|| Error::Checkpoint(format!("manifest is missing tensor '{}'", p.name)))?;
        if entry.shape != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor '{}' has shape {:?}, expected {:?}",
                p.name,
                entry.shape,
                p.value.shape()
            )));
        }
        let start = entry.offset * 8;
        let mut data = Vec::with_capacity(entry.len);
        for i in 0..entry.len {
            let at = start + i * 8;
            data.push(f64::from_le_bytes(data_bytes[at..at + 8].try_into().unwrap()));
        }
        p.value = Tensor::from_vec(&entry.shape, data)?;
        p.zero_grad();
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        scaler: header.scaler,
        meta: header.meta,
    })
}
