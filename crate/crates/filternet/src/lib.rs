//! Time series forecasting with learnable frequency filters.
//!
//! The model normalizes each lookback window per channel (reversible
//! instance normalization), moves it to the frequency domain with a real
//! FFT, multiplies the half spectrum by a learnable complex filter (either
//! a plain per-bin weight or one generated from the input spectrum
//! itself), returns to the time domain, and maps the result to the
//! forecast horizon with a small feed-forward head. Training is plain
//! MSE + Adam over an explicitly composed forward/backward graph.
//!
//! Crate layout:
//! - [`dsp`]: real-signal FFT, circular convolution, spectrum utilities
//! - [`autodiff`]: tensors, parameters, primitive forward/backward rules,
//!   finite-difference gradient checking
//! - [`model`]: the forecaster itself (normalization, filter blocks, head)
//! - [`data`]: CSV ingestion, splits, scaling, windowing, signal generators
//! - [`train`]: MSE/MAE, Adam, the training loop, checkpoint files
//! - [`eval`]: evaluation, baselines, ablations, efficiency probes, exports
//! - [`cli`]: the `filternet` command-line interface

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod train;

pub use error::{Error, Result};

/// Seed used whenever a run does not specify one.
pub const DEFAULT_SEED: u64 = 7;

/// Identity of the random number generation scheme, recorded in run
/// metadata so results can be reproduced bit for bit.
pub const RNG_ID: &str = "chacha20+ziggurat-normal";
