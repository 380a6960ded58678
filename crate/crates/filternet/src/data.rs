//! Dataset ingestion, chronological splitting, train-statistics scaling,
//! sliding-window construction, and synthetic signal generators.

use std::ops::Range;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Frames
// ---------------------------------------------------------------------------

/// A raw multivariate series: `T` rows by `N` named channels, with
/// optional row timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    pub channel_names: Vec<String>,
    /// Row-major `[T, N]`.
    values: Vec<f64>,
    rows: usize,
    pub timestamps: Option<Vec<String>>,
}

impl TimeSeriesFrame {
    pub fn new(channel_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let cols = channel_names.len();
        if cols == 0 || values.len() % cols != 0 {
            return Err(Error::Shape(format!(
                "frame: {} values do not fill rows of {} channels",
                values.len(),
                cols
            )));
        }
        let rows = values.len() / cols;
        Ok(Self { channel_names, values, rows, timestamps: None })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn channels(&self) -> usize {
        self.channel_names.len()
    }

    pub fn value(&self, row: usize, channel: usize) -> f64 {
        self.values[row * self.channels() + channel]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

/// Load a CSV with a header row. A column named `date` becomes the
/// timestamp column; every other column must be numeric.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => {
                if let csv::ErrorKind::Io(io) = e.into_kind() {
                    Error::io(path.display().to_string(), io)
                } else {
                    unreachable!()
                }
            }
            _ => Error::Parse { row: 0, col: String::new(), msg: e.to_string() },
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { row: 0, col: String::new(), msg: e.to_string() })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Parse { row: 0, col: String::new(), msg: "empty header".into() });
    }
    let date_col = headers.iter().position(|h| h == "date");
    let channel_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != date_col)
        .map(|(_, h)| h.to_string())
        .collect();
    if channel_names.is_empty() {
        return Err(Error::Parse {
            row: 0,
            col: String::new(),
            msg: "no numeric channels (only a date column)".into(),
        });
    }
    let mut values = Vec::new();
    let mut timestamps = date_col.map(|_| Vec::new());
    let mut row_idx = 0usize;
    for record in reader.records() {
        row_idx += 1;
        let record =
            record.map_err(|e| Error::Parse { row: row_idx, col: String::new(), msg: e.to_string() })?;
        for (i, cell) in record.iter().enumerate() {
            if Some(i) == date_col {
                timestamps.as_mut().unwrap().push(cell.to_string());
                continue;
            }
            let col_name = headers.get(i).unwrap_or("").to_string();
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                row: row_idx,
                col: col_name.clone(),
                msg: format!("cannot parse '{cell}' as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: row_idx,
                    col: col_name,
                    msg: "non-finite value".into(),
                });
            }
            values.push(v);
        }
    }
    if values.is_empty() {
        return Err(Error::Parse { row: 0, col: String::new(), msg: "file has no data rows".into() });
    }
    let mut frame = TimeSeriesFrame::new(channel_names, values)?;
    frame.timestamps = timestamps;
    Ok(frame)
}

/// Write a frame in the same CSV dialect [`load_csv`] reads.
pub fn save_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    if frame.timestamps.is_some() {
        out.push_str("date,");
    }
    out.push_str(&frame.channel_names.join(","));
    out.push('\n');
    for t in 0..frame.rows() {
        if let Some(ts) = &frame.timestamps {
            out.push_str(&ts[t]);
            out.push(',');
        }
        for n in 0..frame.channels() {
            if n > 0 {
                out.push(',');
            }
            out.push_str(&format!("{:.15e}", frame.value(t, n)));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

/// Contiguous, ordered, disjoint row ranges for train/validation/test.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// How to carve a frame into train/val/test rows: fractional ratios or
/// explicit row borders (the convention fixed benchmark protocols use).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    Ratios((f64, f64, f64)),
    Borders([[usize; 2]; 3]),
}

impl SplitSpec {
    pub fn resolve(&self, rows: usize) -> Result<Splits> {
        match self {
            SplitSpec::Ratios(r) => chronological_split(rows, *r),
            SplitSpec::Borders(b) => explicit_splits(rows, b),
        }
    }
}

/// Build splits from explicit `[start, end)` row borders. Ranges must be
/// non-empty, ordered, and within the frame; they may overlap by up to a
/// lookback so that windows align with an externally fixed target region.
pub fn explicit_splits(rows: usize, borders: &[[usize; 2]; 3]) -> Result<Splits> {
    let [train, val, test] = borders;
    for (name, b) in [("train", train), ("val", val), ("test", test)] {
        if b[0] >= b[1] {
            return Err(Error::Config(format!("{name} border {b:?} is empty or reversed")));
        }
        if b[1] > rows {
            return Err(Error::Config(format!(
                "{name} border {b:?} exceeds {rows} rows"
            )));
        }
    }
    if val[0] < train[0] || test[0] < val[0] {
        return Err(Error::Config("split borders must be chronologically ordered".into()));
    }
    Ok(Splits { train: train[0]..train[1], val: val[0]..val[1], test: test[0]..test[1] })
}

/// Split `[0, rows)` chronologically at `floor(r1*T)` and
/// `floor((r1+r2)*T)`.
pub fn chronological_split(rows: usize, ratios: (f64, f64, f64)) -> Result<Splits> {
    let (a, b, c) = ratios;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::Config(format!("split ratios must all be positive, got {ratios:?}")));
    }
    if ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios must sum to 1, got {ratios:?}")));
    }
    // The guard keeps exact rational boundaries (e.g. 0.9 * 100) from
    // landing one row short due to binary representation error.
    let first = (a * rows as f64 + 1e-6).floor() as usize;
    let second = ((a + b) * rows as f64 + 1e-6).floor() as usize;
    let splits = Splits { train: 0..first, val: first..second, test: second..rows };
    if splits.train.is_empty() || splits.val.is_empty() || splits.test.is_empty() {
        return Err(Error::Config(format!(
            "split of {rows} rows at {ratios:?} leaves an empty range"
        )));
    }
    Ok(splits)
}

// ---------------------------------------------------------------------------
// Scaling
// ---------------------------------------------------------------------------

/// Per-channel z-score statistics, fit on the training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const SCALER_STD_FLOOR: f64 = 1e-8;

pub fn fit_scaler(frame: &TimeSeriesFrame, train: &Range<usize>) -> Result<Scaler> {
    if train.is_empty() || train.end > frame.rows() {
        return Err(Error::Config(format!(
            "scaler train range {train:?} invalid for {} rows",
            frame.rows()
        )));
    }
    let n = frame.channels();
    let count = train.len() as f64;
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    for ch in 0..n {
        let mut sum = 0.0;
        for t in train.clone() {
            sum += frame.value(t, ch);
        }
        mean[ch] = sum / count;
        let mut var = 0.0;
        for t in train.clone() {
            let d = frame.value(t, ch) - mean[ch];
            var += d * d;
        }
        std[ch] = (var / count).sqrt().max(SCALER_STD_FLOOR);
    }
    Ok(Scaler { mean, std })
}

impl Scaler {
    pub fn apply(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let n = frame.channels();
        let mut out = frame.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let ch = i % n;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        Ok(out)
    }

    pub fn invert(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let n = frame.channels();
        let mut out = frame.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            let ch = i % n;
            *v = *v * self.std[ch] + self.mean[ch];
        }
        Ok(out)
    }

    /// Undo scaling for a single channel value.
    pub fn invert_value(&self, channel: usize, v: f64) -> f64 {
        v * self.std[channel] + self.mean[channel]
    }

    fn check(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.channels() != self.mean.len() {
            return Err(Error::Shape(format!(
                "scaler has {} channels, frame has {}",
                self.mean.len(),
                frame.channels()
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

/// A batch of paired lookback/horizon windows:
/// `x in R^{B x N x L}`, `y in R^{B x N x tau}`.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    pub x: Tensor,
    pub y: Tensor,
}

/// Start offsets of every window fully contained in `range`. Windows never
/// cross a split boundary; the count is `len - L - tau + 1` at stride 1.
pub fn window_starts(range: &Range<usize>, lookback: usize, horizon: usize, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::Config("window stride must be >= 1".into()));
    }
    let need = lookback + horizon;
    if range.len() < need {
        return Err(Error::Config(format!(
            "range of {} rows is too short for lookback {} + horizon {}",
            range.len(),
            lookback,
            horizon
        )));
    }
    Ok((range.start..=range.end - need).step_by(stride).collect())
}

/// Materialize the windows starting at `starts` into `[B,N,L]` / `[B,N,tau]`
/// tensors (channel-major per window).
pub fn gather_batch(
    frame: &TimeSeriesFrame,
    starts: &[usize],
    lookback: usize,
    horizon: usize,
) -> Result<WindowBatch> {
    let n = frame.channels();
    let b = starts.len();
    if b == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    let mut x = Tensor::zeros(&[b, n, lookback]);
    let mut y = Tensor::zeros(&[b, n, horizon]);
    let xd = x.data_mut();
    let yd = y.data_mut();
    for (bi, &start) in starts.iter().enumerate() {
        if start + lookback + horizon > frame.rows() {
            return Err(Error::Config(format!(
                "window at {start} overruns frame of {} rows",
                frame.rows()
            )));
        }
        for ch in 0..n {
            let xbase = (bi * n + ch) * lookback;
            for l in 0..lookback {
                xd[xbase + l] = frame.value(start + l, ch);
            }
            let ybase = (bi * n + ch) * horizon;
            for t in 0..horizon {
                yd[ybase + t] = frame.value(start + lookback + t, ch);
            }
        }
    }
    Ok(WindowBatch { x, y })
}

/// Everything training and evaluation need: the scaled frame, the scaler
/// that produced it, and the split ranges.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub frame: TimeSeriesFrame,
    pub scaler: Scaler,
    pub splits: Splits,
}

/// Split chronologically, fit the scaler on the training rows, and z-score
/// the whole frame. Each split must hold at least one full window.
pub fn prepare(
    frame: &TimeSeriesFrame,
    ratios: (f64, f64, f64),
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData> {
    let splits = chronological_split(frame.rows(), ratios)?;
    prepare_with_splits(frame, splits, lookback, horizon)
}

/// [`prepare`] driven by a [`SplitSpec`].
pub fn prepare_spec(
    frame: &TimeSeriesFrame,
    spec: &SplitSpec,
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData> {
    let splits = spec.resolve(frame.rows())?;
    prepare_with_splits(frame, splits, lookback, horizon)
}

/// [`prepare`] with already-resolved split ranges (e.g. fixed benchmark
/// borders instead of ratios).
pub fn prepare_with_splits(
    frame: &TimeSeriesFrame,
    splits: Splits,
    lookback: usize,
    horizon: usize,
) -> Result<PreparedData> {
    for (name, r) in [("train", &splits.train), ("val", &splits.val), ("test", &splits.test)] {
        if r.len() < lookback + horizon {
            return Err(Error::Config(format!(
                "{name} split has {} rows, needs at least {}",
                r.len(),
                lookback + horizon
            )));
        }
    }
    let scaler = fit_scaler(frame, &splits.train)?;
    let scaled = scaler.apply(frame)?;
    Ok(PreparedData { frame: scaled, scaler, splits })
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

fn single_channel(name: &str, values: Vec<f64>) -> TimeSeriesFrame {
    TimeSeriesFrame::new(vec![name.to_string()], values).expect("one channel")
}

/// Sum of sinusoids `x[t] = sum_j a_j * sin(2 pi t / p_j)`; a clean
/// multi-rate signal with low/mid/high components under the defaults.
/// Noise-free, so `seed` only keeps the generator signatures uniform.
pub fn synth_multifreq(
    steps: usize,
    periods: &[f64],
    amplitudes: &[f64],
    _seed: u64,
) -> Result<TimeSeriesFrame> {
    if periods.is_empty() || periods.len() != amplitudes.len() {
        return Err(Error::Config("periods and amplitudes must be non-empty and equal length".into()));
    }
    if let Some(p) = periods.iter().find(|p| **p <= 0.0) {
        return Err(Error::Config(format!("non-positive period {p}")));
    }
    let max_p = periods.iter().cloned().fold(0.0, f64::max);
    if (steps as f64) < 2.0 * max_p {
        return Err(Error::Config(format!(
            "need at least {} steps to cover two periods of {max_p}",
            (2.0 * max_p).ceil()
        )));
    }
    let values = (0..steps)
        .map(|t| {
            periods
                .iter()
                .zip(amplitudes)
                .map(|(p, a)| a * (2.0 * std::f64::consts::PI * t as f64 / p).sin())
                .sum()
        })
        .collect();
    Ok(single_channel("x", values))
}

pub const DEFAULT_MULTIFREQ_PERIODS: [f64; 3] = [96.0, 24.0, 4.0];

/// `slope * t` plus seeded Gaussian noise.
pub fn synth_trend_noise(steps: usize, slope: f64, noise_std: f64, seed: u64) -> Result<TimeSeriesFrame> {
    if noise_std < 0.0 {
        return Err(Error::Config("noise_std must be >= 0".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let values = (0..steps)
        .map(|t| slope * t as f64 + noise_std * normal.sample(&mut rng))
        .collect();
    Ok(single_channel("x", values))
}

/// Sum of unit sinusoids at the given periods plus seeded Gaussian noise.
pub fn synth_multiperiod_noise(
    steps: usize,
    periods: &[f64],
    noise_std: f64,
    seed: u64,
) -> Result<TimeSeriesFrame> {
    if periods.is_empty() {
        return Err(Error::Config("periods must be non-empty".into()));
    }
    if let Some(p) = periods.iter().find(|p| **p <= 0.0) {
        return Err(Error::Config(format!("non-positive period {p}")));
    }
    if noise_std < 0.0 {
        return Err(Error::Config("noise_std must be >= 0".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let values = (0..steps)
        .map(|t| {
            let clean: f64 = periods
                .iter()
                .map(|p| (2.0 * std::f64::consts::PI * t as f64 / p).sin())
                .sum();
            clean + noise_std * normal.sample(&mut rng)
        })
        .collect();
    Ok(single_channel("x", values))
}
