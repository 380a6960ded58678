//! C ABI for the forecasting engine.
//!
//! The surface is deliberately small: load a checkpoint into an opaque
//! handle, query its geometry, and run single-window forecasts on raw
//! (unscaled) values. Every fallible call returns a [`FilternetStatus`];
//! the textual reason for the most recent failure on the current thread
//! is available from [`filternet_last_error`].
//!
//! The C header is generated into `include/filternet.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use filternet::autodiff::Tensor;
use filternet::model::FilterNet;
use filternet::train::{load_checkpoint, Checkpoint};

/// Outcome of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilternetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IoError = 4,
    FormatError = 5,
    InternalError = 6,
}

/// Opaque handle around a loaded checkpoint and its network.
pub struct FilternetModel {
    checkpoint: Checkpoint,
    net: FilterNet,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl AsRef<str>) {
    let sanitized = msg.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &filternet::Error) -> FilternetStatus {
    use filternet::Error;
    match err {
        Error::Io { .. } => FilternetStatus::IoError,
        Error::Checkpoint(_) | Error::Parse { .. } => FilternetStatus::FormatError,
        Error::Shape(_) | Error::Config(_) => FilternetStatus::InvalidArgument,
        Error::NonFinite(_) => FilternetStatus::InternalError,
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn filternet_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn filternet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Load a checkpoint file into a newly allocated model handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_load(
    path: *const c_char,
    out: *mut *mut FilternetModel,
) -> FilternetStatus {
    if path.is_null() || out.is_null() {
        set_error("null pointer argument");
        return FilternetStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return FilternetStatus::InvalidUtf8;
    };
    match load_checkpoint(Path::new(path)) {
        Ok(checkpoint) => {
            let net = checkpoint.network();
            let model = Box::new(FilternetModel { checkpoint, net });
            *out = Box::into_raw(model);
            FilternetStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            *out = ptr::null_mut();
            status_of(&e)
        }
    }
}

/// Release a handle returned by [`filternet_model_load`]. A null pointer
/// is a no-op.
///
/// # Safety
/// `model` must come from `filternet_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_free(model: *mut FilternetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Lookback window length the model was trained with.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_lookback(model: *const FilternetModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.lookback)
}

/// Forecast horizon length.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_horizon(model: *const FilternetModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.horizon)
}

/// Number of input channels.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_channels(model: *const FilternetModel) -> usize {
    model.as_ref().map_or(0, |m| m.checkpoint.config.channels)
}

/// Forecast one window. `input` holds `channels x lookback` values in row
/// major order (channel rows), in the dataset's original units; `output`
/// receives `channels x horizon` forecast values, same layout and units.
///
/// # Safety
/// `input`/`output` must point to buffers of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn filternet_model_predict(
    model: *const FilternetModel,
    input: *const f64,
    input_len: usize,
    output: *mut f64,
    output_len: usize,
) -> FilternetStatus {
    let Some(m) = model.as_ref() else {
        set_error("null model handle");
        return FilternetStatus::NullPointer;
    };
    if input.is_null() || output.is_null() {
        set_error("null buffer argument");
        return FilternetStatus::NullPointer;
    }
    let channels = m.checkpoint.config.channels;
    let lookback = m.checkpoint.config.lookback;
    let horizon = m.checkpoint.config.horizon;
    if input_len != channels * lookback {
        set_error(format!(
            "input length {input_len} does not match channels*lookback = {}",
            channels * lookback
        ));
        return FilternetStatus::InvalidArgument;
    }
    if output_len != channels * horizon {
        set_error(format!(
            "output length {output_len} does not match channels*horizon = {}",
            channels * horizon
        ));
        return FilternetStatus::InvalidArgument;
    }
    let raw = std::slice::from_raw_parts(input, input_len);
    if raw.iter().any(|v| !v.is_finite()) {
        set_error("input contains non-finite values");
        return FilternetStatus::InvalidArgument;
    }
    // Scaler-normalize per channel, forecast, then map back to raw units.
    let scaler = &m.checkpoint.scaler;
    let mut scaled = Vec::with_capacity(input_len);
    for ch in 0..channels {
        for t in 0..lookback {
            let v = raw[ch * lookback + t];
            scaled.push((v - scaler.mean[ch]) / scaler.std[ch]);
        }
    }
    let x = match Tensor::from_vec(&[1, channels, lookback], scaled) {
        Ok(x) => x,
        Err(e) => {
            set_error(e.to_string());
            return FilternetStatus::InternalError;
        }
    };
    match m.net.forward(&x) {
        Ok(yhat) => {
            let out = std::slice::from_raw_parts_mut(output, output_len);
            for ch in 0..channels {
                for t in 0..horizon {
                    let v = yhat.data()[ch * horizon + t];
                    out[ch * horizon + t] = scaler.invert_value(ch, v);
                }
            }
            FilternetStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use filternet::data::{prepare, synth_multifreq};
    use filternet::model::{FilterKind, ModelConfig};
    use filternet::train::{save_checkpoint, train_model, TrainConfig};
    use std::ffi::CString;

    fn trained_checkpoint(dir: &Path) -> std::path::PathBuf {
        let frame = synth_multifreq(400, &[16.0], &[1.0], 0).unwrap();
        let mut config = ModelConfig::new(16, 8, 1, FilterKind::PaiUni);
        config.ffn_hidden = 16;
        let data = prepare(&frame, (0.7, 0.2, 0.1), 16, 8).unwrap();
        let cfg = TrainConfig { max_epochs: 3, patience: 3, ..Default::default() };
        let (ckpt, _) = train_model(&config, &data, &cfg).unwrap();
        let path = dir.join("model.fltn");
        save_checkpoint(&path, &ckpt).unwrap();
        path
    }

    #[test]
    fn load_query_predict_free() {
        let dir = tempfile::tempdir().unwrap();
        let path = trained_checkpoint(dir.path());
        let c_path = CString::new(path.to_str().unwrap()).unwrap();

        let mut handle: *mut FilternetModel = ptr::null_mut();
        let status = unsafe { filternet_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, FilternetStatus::Ok);
        assert!(!handle.is_null());

        unsafe {
            assert_eq!(filternet_model_lookback(handle), 16);
            assert_eq!(filternet_model_horizon(handle), 8);
            assert_eq!(filternet_model_channels(handle), 1);
        }

        let input: Vec<f64> = (0..16)
            .map(|t| (2.0 * std::f64::consts::PI * t as f64 / 16.0).sin())
            .collect();
        let mut output = vec![0.0f64; 8];
        let status = unsafe {
            filternet_model_predict(handle, input.as_ptr(), input.len(), output.as_mut_ptr(), output.len())
        };
        assert_eq!(status, FilternetStatus::Ok);
        assert!(output.iter().all(|v| v.is_finite()));

        // Same answer as the library path.
        let ckpt = load_checkpoint(&path).unwrap();
        let scaled: Vec<f64> = input
            .iter()
            .map(|v| (v - ckpt.scaler.mean[0]) / ckpt.scaler.std[0])
            .collect();
        let x = Tensor::from_vec(&[1, 1, 16], scaled).unwrap();
        let yhat = ckpt.network().forward(&x).unwrap();
        for (ffi, lib) in output.iter().zip(yhat.data()) {
            let back = ckpt.scaler.invert_value(0, *lib);
            assert_eq!(*ffi, back);
        }

        unsafe { filternet_model_free(handle) };
    }

    #[test]
    fn error_paths_set_messages() {
        let mut handle: *mut FilternetModel = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.fltn").unwrap();
        let status = unsafe { filternet_model_load(missing.as_ptr(), &mut handle) };
        assert_eq!(status, FilternetStatus::IoError);
        assert!(handle.is_null());
        let msg = unsafe { CStr::from_ptr(filternet_last_error()) };
        assert!(!msg.to_bytes().is_empty());

        let status = unsafe { filternet_model_load(ptr::null(), &mut handle) };
        assert_eq!(status, FilternetStatus::NullPointer);

        // Wrong buffer sizes are rejected before any computation.
        let dir = tempfile::tempdir().unwrap();
        let path = trained_checkpoint(dir.path());
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let status = unsafe { filternet_model_load(c_path.as_ptr(), &mut handle) };
        assert_eq!(status, FilternetStatus::Ok);
        let input = vec![0.0f64; 3];
        let mut output = vec![0.0f64; 8];
        let status = unsafe {
            filternet_model_predict(handle, input.as_ptr(), input.len(), output.as_mut_ptr(), output.len())
        };
        assert_eq!(status, FilternetStatus::InvalidArgument);
        let msg = unsafe { CStr::from_ptr(filternet_last_error()) }.to_str().unwrap();
        assert!(msg.contains("input length"), "{msg}");
        unsafe { filternet_model_free(handle) };
    }

    #[test]
    fn version_and_header_exist() {
        let v = unsafe { CStr::from_ptr(filternet_version()) }.to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));

        let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/filternet.h");
        let text = std::fs::read_to_string(header).expect("generated header");
        for symbol in [
            "FilternetModel",
            "FilternetStatus",
            "filternet_model_load",
            "filternet_model_predict",
            "filternet_last_error",
        ] {
            assert!(text.contains(symbol), "header missing {symbol}");
        }
    }
}
