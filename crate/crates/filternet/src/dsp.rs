//! Real-signal Fourier transforms, circular convolution, and spectrum
//! utilities.
//!
//! A real signal of length `L` is fully described by the `F = L/2 + 1`
//! non-negative-frequency bins of its DFT (the remaining bins are complex
//! conjugates). Everything downstream parameterizes filters over those
//! `F` bins. Conventions: unnormalized forward transform, `1/L` applied
//! on the inverse, so `irfft(rfft(x)) == x`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Number of half-spectrum bins for a real signal of length `len`.
pub fn half_bins(len: usize) -> usize {
    len / 2 + 1
}

/// Complex half-spectrum of a real signal.
///
/// `origin_len` is the length of the signal that produced it; it is
/// required for exact inversion because even and odd lengths map to the
/// same bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpectrum {
    pub bins: Vec<Complex<f64>>,
    pub origin_len: usize,
}

impl HalfSpectrum {
    pub fn new(bins: Vec<Complex<f64>>, origin_len: usize) -> Result<Self> {
        if bins.len() != half_bins(origin_len) {
            return Err(Error::Shape(format!(
                "half spectrum for length {} needs {} bins, got {}",
                origin_len,
                half_bins(origin_len),
                bins.len()
            )));
        }
        Ok(Self { bins, origin_len })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

// Plans are cached per (length, direction); planning is far more
// expensive than executing at the lengths used here.
static PLANS: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Fetch (or create) a cached FFT plan. `inverse` selects direction.
pub(crate) fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLANS.lock().unwrap_or_else(|p| p.into_inner());
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(len)
            } else {
                planner.plan_fft_forward(len)
            }
        })
        .clone()
}

/// In-place unnormalized forward FFT over a complex buffer.
pub(crate) fn forward_complex(buf: &mut [Complex<f64>]) {
    plan(buf.len(), false).process(buf);
}

/// In-place unnormalized inverse FFT over a complex buffer (no 1/L).
pub(crate) fn inverse_complex(buf: &mut [Complex<f64>]) {
    plan(buf.len(), true).process(buf);
}

/// Forward real FFT: `bins[k] = sum_n x[n] * exp(-2*pi*i*k*n/L)` for
/// `k = 0..L/2`.
///
/// Bins 0 and (for even `L`) `L/2` are exactly real for real input; this
/// is enforced on the output.
pub fn rfft(x: &[f64]) -> Result<HalfSpectrum> {
    if x.is_empty() {
        return Err(Error::Shape("rfft input is empty".into()));
    }
    if let Some(bad) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("rfft input at index {bad}")));
    }
    let len = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    forward_complex(&mut buf);
    let nbins = half_bins(len);
    let mut bins = buf;
    bins.truncate(nbins);
    bins[0].im = 0.0;
    if len % 2 == 0 {
        bins[nbins - 1].im = 0.0;
    }
    HalfSpectrum::new(bins, len)
}

/// Inverse real FFT with `1/L` normalization; the exact left-inverse of
/// [`rfft`].
///
/// The full spectrum is rebuilt by conjugate symmetry, so any imaginary
/// component on bin 0 or the Nyquist bin cannot influence the (real)
/// output and is effectively projected away.
pub fn irfft(s: &HalfSpectrum, out_len: usize) -> Result<Vec<f64>> {
    if s.bins.len() != half_bins(out_len) || s.origin_len != out_len {
        return Err(Error::Shape(format!(
            "irfft: spectrum has {} bins for origin length {}, requested length {}",
            s.bins.len(),
            s.origin_len,
            out_len
        )));
    }
    let mut buf = vec![Complex::new(0.0, 0.0); out_len];
    buf[..s.bins.len()].copy_from_slice(&s.bins);
    for k in s.bins.len()..out_len {
        buf[k] = buf[out_len - k].conj();
    }
    inverse_complex(&mut buf);
    let scale = 1.0 / out_len as f64;
    Ok(buf.into_iter().map(|c| c.re * scale).collect())
}

/// Circular convolution by its definition:
/// `y[n] = sum_m h[m] * x[(n - m) mod L]`.
///
/// Quadratic on purpose; this is the ground-truth reference for the
/// frequency-domain path.
pub fn circular_convolve_naive(h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if h.len() != x.len() {
        return Err(Error::Shape(format!(
            "circular convolution needs equal lengths, got {} and {}",
            h.len(),
            x.len()
        )));
    }
    let n = h.len();
    let mut y = vec![0.0; n];
    for (i, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (m, &hm) in h.iter().enumerate() {
            let idx = (i + n - m) % n;
            acc += hm * x[idx];
        }
        *out = acc;
    }
    Ok(y)
}

/// One row of a spectrum profile: bin index, normalized frequency
/// `k / origin_len`, amplitude (complex modulus), and phase in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub bin: usize,
    pub freq: f64,
    pub amplitude: f64,
    pub phase: f64,
}

/// Amplitude/phase view of a half spectrum, used for filter-response
/// exports.
pub fn spectrum_profile(s: &HalfSpectrum) -> Vec<SpectrumRow> {
    s.bins
        .iter()
        .enumerate()
        .map(|(k, c)| SpectrumRow {
            bin: k,
            freq: k as f64 / s.origin_len as f64,
            amplitude: (c.re * c.re + c.im * c.im).sqrt(),
            phase: c.im.atan2(c.re),
        })
        .collect()
}

/// Write a spectrum profile as CSV (`bin,freq,amplitude,phase`) with 14
/// significant digits.
pub fn write_spectrum_csv<W: Write>(s: &HalfSpectrum, mut out: W) -> std::io::Result<()> {
    writeln!(out, "bin,freq,amplitude,phase")?;
    for row in spectrum_profile(s) {
        writeln!(
            out,
            "{},{:.13e},{:.13e},{:.13e}",
            row.bin, row.freq, row.amplitude, row.phase
        )?;
    }
    Ok(())
}
