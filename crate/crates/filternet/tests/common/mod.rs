//! Seed-parameterized property battery shared by the property and
//! acceptance suites. Every check here restates a module-level invariant;
//! the seed controls all randomness so a failure reproduces exactly.

use filternet::autodiff::{
    affine_bwd, affine_fwd, complex_mul_bwd, complex_mul_fwd, grad_check, inv_dft_real_bwd,
    inv_dft_real_fwd, irfft_bwd, irfft_fwd, rfft_bwd, rfft_fwd, ComplexPair, DiffModel, Tensor,
};
use filternet::data::{
    chronological_split, fit_scaler, prepare, synth_multifreq, synth_multiperiod_noise,
    synth_trend_noise, window_starts, TimeSeriesFrame,
};
use filternet::dsp;
use filternet::eval::evaluate;
use filternet::model::{
    pai_filter_forward, well_conditioned_batch, FilterKind, FilterNet, LossModel, ModelConfig,
};
use filternet::train::{train_model, TrainConfig};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex;

fn rng_for(seed: u64, salt: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn rand_vec(rng: &mut ChaCha20Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, rand_vec(rng, len)).unwrap()
}

fn rand_pair(rng: &mut ChaCha20Rng, shape: &[usize]) -> ComplexPair {
    ComplexPair::new(rand_tensor(rng, shape), rand_tensor(rng, shape)).unwrap()
}

// ---------------------------------------------------------------------------
// Signal-processing invariants
// ---------------------------------------------------------------------------

pub fn dsp_properties(seed: u64) {
    let mut rng = rng_for(seed, 1);

    // Convolution theorem across a spread of lengths.
    for _ in 0..12 {
        let len = rng.random_range(2usize..=256);
        let h = rand_vec(&mut rng, len);
        let x = rand_vec(&mut rng, len);
        let sh = dsp::rfft(&h).unwrap();
        let sx = dsp::rfft(&x).unwrap();
        let prod: Vec<Complex<f64>> = sh.bins.iter().zip(&sx.bins).map(|(a, b)| a * b).collect();
        let via = dsp::irfft(&dsp::HalfSpectrum::new(prod, len).unwrap(), len).unwrap();
        let direct = dsp::circular_convolve_naive(&h, &x).unwrap();
        for (a, b) in via.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-9, "seed {seed}, len {len}: {a} vs {b}");
        }
    }

    // Parseval's identity on the half spectrum.
    for _ in 0..8 {
        let len = rng.random_range(1usize..=256);
        let x = rand_vec(&mut rng, len);
        let s = dsp::rfft(&x).unwrap();
        let time: f64 = x.iter().map(|v| v * v).sum();
        let mut spec = s.bins[0].norm_sqr();
        for k in 1..s.bins.len() {
            let double = !(len % 2 == 0 && k == s.bins.len() - 1);
            spec += s.bins[k].norm_sqr() * if double { 2.0 } else { 1.0 };
        }
        spec /= len as f64;
        assert!(
            (time - spec).abs() <= 1e-9 * time.abs().max(1.0),
            "seed {seed}, len {len}: {time} vs {spec}"
        );
    }

    // Shift equivariance is exact in the quadratic reference.
    for _ in 0..8 {
        let len = rng.random_range(2usize..=64);
        let h = rand_vec(&mut rng, len);
        let x = rand_vec(&mut rng, len);
        let k = rng.random_range(0..len);
        let shifted: Vec<f64> = (0..len).map(|i| x[(i + len - k) % len]).collect();
        let y = dsp::circular_convolve_naive(&h, &x).unwrap();
        let y_shift: Vec<f64> = (0..len).map(|i| y[(i + len - k) % len]).collect();
        let shift_conv = dsp::circular_convolve_naive(&h, &shifted).unwrap();
        assert_eq!(y_shift, shift_conv, "seed {seed}, len {len}, shift {k}");
    }

    // Linearity of the transform.
    for _ in 0..8 {
        let len = rng.random_range(1usize..=128);
        let x = rand_vec(&mut rng, len);
        let y = rand_vec(&mut rng, len);
        let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let sm = dsp::rfft(&mixed).unwrap();
        let sx = dsp::rfft(&x).unwrap();
        let sy = dsp::rfft(&y).unwrap();
        for k in 0..sm.bins.len() {
            let want = sx.bins[k] * a + sy.bins[k] * b;
            assert!(
                (sm.bins[k] - want).norm() < 1e-10 * (1.0 + want.norm()),
                "seed {seed}, len {len}, bin {k}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Differentiation invariants
// ---------------------------------------------------------------------------

fn fd_grad(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((fp - fm) / (2.0 * eps));
    }
    out
}

fn assert_close_rel(analytic: &[f64], numeric: &[f64], tol: f64, what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel < tol, "{what}[{i}]: analytic {a} vs numeric {n} (rel {rel})");
    }
}

fn sum_sq(t: &Tensor) -> f64 {
    t.data().iter().map(|v| v * v).sum()
}

pub fn autodiff_properties(seed: u64) {
    let mut rng = rng_for(seed, 2);
    let eps = 1e-5;

    // Affine primitive against central differences.
    let x = rand_tensor(&mut rng, &[3, 5]);
    let w = rand_tensor(&mut rng, &[5, 4]);
    let b = rand_tensor(&mut rng, &[4]);
    let y = affine_fwd(&x, &w, Some(&b)).unwrap();
    let mut dy = y.clone();
    dy.scale(2.0);
    let mut dw = Tensor::zeros(w.shape());
    let mut db = Tensor::zeros(b.shape());
    let dx = affine_bwd(&x, &w, &dy, &mut dw, Some(&mut db)).unwrap();
    let fd = fd_grad(&mut |p| sum_sq(&affine_fwd(p, &w, Some(&b)).unwrap()), &x, eps);
    assert_close_rel(dx.data(), &fd, 1e-4, "affine dx");
    let fd = fd_grad(&mut |p| sum_sq(&affine_fwd(&x, p, Some(&b)).unwrap()), &w, eps);
    assert_close_rel(dw.data(), &fd, 1e-4, "affine dw");

    // Complex elementwise product with broadcasting.
    let a = rand_pair(&mut rng, &[2, 3, 4]);
    let bb = rand_pair(&mut rng, &[1, 4]);
    let c = complex_mul_fwd(&a, &bb).unwrap();
    let mut dc = c.clone();
    dc.re.scale(2.0);
    dc.im.scale(2.0);
    let mut dbb = ComplexPair::zeros(bb.shape());
    let da = complex_mul_bwd(&a, &bb, &dc, &mut dbb).unwrap();
    let loss = |a: &ComplexPair, b: &ComplexPair| {
        let c = complex_mul_fwd(a, b).unwrap();
        sum_sq(&c.re) + sum_sq(&c.im)
    };
    let fd = fd_grad(
        &mut |p| loss(&ComplexPair::new(p.clone(), a.im.clone()).unwrap(), &bb),
        &a.re,
        eps,
    );
    assert_close_rel(da.re.data(), &fd, 1e-4, "cmul da.re");
    let fd = fd_grad(
        &mut |p| loss(&a, &ComplexPair::new(bb.re.clone(), p.clone()).unwrap()),
        &bb.im,
        eps,
    );
    assert_close_rel(dbb.im.data(), &fd, 1e-4, "cmul db.im");

    // Spectral nodes end to end: f(x) = ||irfft(H * rfft(x))||^2.
    let len = 2 + (seed as usize % 7) + 6; // 8..=14, varies with seed
    let x = rand_tensor(&mut rng, &[2, len]);
    let h = rand_pair(&mut rng, &[1, dsp::half_bins(len)]);
    let run = |x: &Tensor| {
        let spec = rfft_fwd(x).unwrap();
        let filtered = complex_mul_fwd(&spec, &h).unwrap();
        irfft_fwd(&filtered, len).unwrap()
    };
    let y = run(&x);
    let mut dy = y.clone();
    dy.scale(2.0);
    let dsf = irfft_bwd(&dy).unwrap();
    let spec = rfft_fwd(&x).unwrap();
    let mut dh = ComplexPair::zeros(h.shape());
    let dspec = complex_mul_bwd(&spec, &h, &dsf, &mut dh).unwrap();
    let dx = rfft_bwd(&dspec, len).unwrap();
    let fd = fd_grad(&mut |p| sum_sq(&run(p)), &x, eps);
    assert_close_rel(dx.data(), &fd, 1e-4, "spectral dx");

    // Full inverse DFT node.
    let s = rand_pair(&mut rng, &[2, 6]);
    let y = inv_dft_real_fwd(&s).unwrap();
    let mut dy = y.clone();
    dy.scale(2.0);
    let ds = inv_dft_real_bwd(&dy).unwrap();
    let fd = fd_grad(
        &mut |p| sum_sq(&inv_dft_real_fwd(&ComplexPair::new(p.clone(), s.im.clone()).unwrap()).unwrap()),
        &s.re,
        eps,
    );
    assert_close_rel(ds.re.data(), &fd, 1e-4, "inv dft ds.re");

    // Zero cotangent in, zero gradient out, exactly.
    let mut dw = Tensor::zeros(w.shape());
    let dx = affine_bwd(&x2_like(&w, &mut rng), &w, &Tensor::zeros(&[3, 4]), &mut dw, None).unwrap();
    assert!(dx.data().iter().all(|&v| v == 0.0));
    assert!(dw.data().iter().all(|&v| v == 0.0));
    let t = rfft_bwd(&ComplexPair::zeros(&[1, dsp::half_bins(8)]), 8).unwrap();
    assert!(t.data().iter().all(|&v| v == 0.0));

    // Gradient accumulation is order independent.
    let xa = rand_tensor(&mut rng, &[2, 4]);
    let xb = rand_tensor(&mut rng, &[2, 4]);
    let wshare = rand_tensor(&mut rng, &[4, 4]);
    let branch = |x: &Tensor, dw: &mut Tensor| {
        let y = affine_fwd(x, &wshare, None).unwrap();
        let mut dy = y.clone();
        dy.scale(2.0);
        affine_bwd(x, &wshare, &dy, dw, None).unwrap();
    };
    let mut d1 = Tensor::zeros(wshare.shape());
    branch(&xa, &mut d1);
    branch(&xb, &mut d1);
    let mut d2 = Tensor::zeros(wshare.shape());
    branch(&xb, &mut d2);
    branch(&xa, &mut d2);
    for (p, q) in d1.data().iter().zip(d2.data()) {
        assert!((p - q).abs() < 1e-10, "order dependence: {p} vs {q}");
    }
}

fn x2_like(w: &Tensor, rng: &mut ChaCha20Rng) -> Tensor {
    rand_tensor(rng, &[3, w.shape()[0]])
}

// ---------------------------------------------------------------------------
// Model invariants
// ---------------------------------------------------------------------------

pub fn model_properties(seed: u64) {
    let mut rng = rng_for(seed, 3);

    // Plain filtering is circular convolution for every parameter setting.
    for _ in 0..4 {
        let len = rng.random_range(4usize..=32);
        let bins = dsp::half_bins(len);
        let z = rand_tensor(&mut rng, &[1, 2, len]);
        let hre = rand_tensor(&mut rng, &[1, bins]);
        let him = rand_tensor(&mut rng, &[1, bins]);
        let s = pai_filter_forward(&z, &hre, &him).unwrap();
        let spec = dsp::HalfSpectrum::new(
            hre.data()
                .iter()
                .zip(him.data())
                .map(|(&a, &b)| Complex::new(a, b))
                .collect(),
            len,
        )
        .unwrap();
        let impulse = dsp::irfft(&spec, len).unwrap();
        for ch in 0..2 {
            let zrow = &z.data()[ch * len..(ch + 1) * len];
            let want = dsp::circular_convolve_naive(&impulse, zrow).unwrap();
            for (a, b) in s.data()[ch * len..(ch + 1) * len].iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "seed {seed}, len {len}");
            }
        }
    }

    for kind in [FilterKind::PaiUni, FilterKind::PaiInd, FilterKind::Tex] {
        let mut config = ModelConfig::new(12, 5, 2, kind);
        config.ffn_hidden = 8;
        let net = FilterNet::init(config, seed).unwrap();
        let x = rand_tensor(&mut rng, &[2, 2, 12]);

        // Shape contract and bitwise determinism.
        let y1 = net.forward(&x).unwrap();
        let y2 = net.forward(&x).unwrap();
        assert_eq!(y1.shape(), &[2, 2, 5], "{kind:?}");
        assert_eq!(y1.data(), y2.data(), "{kind:?} determinism");

        // Per-window affine equivariance with frozen parameters.
        let (a, c) = (rng.random_range(0.5..3.0), rng.random_range(-2.0..2.0));
        let scaled =
            Tensor::from_vec(x.shape(), x.data().iter().map(|v| a * v + c).collect()).unwrap();
        let out = net.forward(&scaled).unwrap();
        for (got, want) in out.data().iter().zip(y1.data().iter().map(|v| a * v + c)) {
            assert!((got - want).abs() < 1e-8, "{kind:?}: {got} vs {want}");
        }

        // No dead parameters on generic data.
        let (gx, gy) = well_conditioned_batch(&net, 2, seed ^ 0xAB).unwrap();
        let mut lm = LossModel::new(net, gx, gy);
        lm.loss_and_grad().unwrap();
        for p in lm.params_mut() {
            let norm: f64 = p.grad.data().iter().map(|v| v * v).sum();
            assert!(norm > 0.0, "{kind:?}: dead parameter {}", p.name);
        }

        // Analytic gradients agree with central differences.
        let report = grad_check(&mut lm, 1e-5).unwrap();
        assert!(
            report.max_rel_err() < 1e-4,
            "{kind:?} seed {seed}: {:?}",
            report.groups
        );
    }
}

// ---------------------------------------------------------------------------
// Data invariants
// ---------------------------------------------------------------------------

pub fn data_properties(seed: u64) {
    let mut rng = rng_for(seed, 4);

    // Windows never leak across split boundaries.
    let rows = rng.random_range(60usize..200);
    let values = rand_vec(&mut rng, rows);
    let frame = TimeSeriesFrame::new(vec!["a".into()], values).unwrap();
    let splits = chronological_split(frame.rows(), (0.7, 0.2, 0.1)).unwrap();
    for range in [&splits.train, &splits.val, &splits.test] {
        if range.len() < 6 {
            continue;
        }
        for start in window_starts(range, 4, 2, 1).unwrap() {
            assert!(start >= range.start && start + 6 <= range.end, "seed {seed}");
        }
    }

    // Scaler statistics depend only on the training rows.
    let mut perturbed = frame.clone();
    let before = fit_scaler(&frame, &splits.train).unwrap();
    for v in &mut perturbed.values_mut()[splits.test.start..] {
        *v += 500.0;
    }
    let after = fit_scaler(&perturbed, &splits.train).unwrap();
    assert_eq!(before, after, "seed {seed}: scaler looked outside train rows");

    // Generators are pure functions of their arguments.
    let a = synth_trend_noise(200, 0.3, 0.2, seed).unwrap();
    let b = synth_trend_noise(200, 0.3, 0.2, seed).unwrap();
    assert_eq!(a.values(), b.values());
    let a = synth_multiperiod_noise(300, &[24.0, 8.0], 0.1, seed).unwrap();
    let b = synth_multiperiod_noise(300, &[24.0, 8.0], 0.1, seed).unwrap();
    assert_eq!(a.values(), b.values());
    let a = synth_multifreq(300, &[32.0, 8.0], &[1.0, 0.5], seed).unwrap();
    let b = synth_multifreq(300, &[32.0, 8.0], &[1.0, 0.5], seed).unwrap();
    assert_eq!(a.values(), b.values());
}

// ---------------------------------------------------------------------------
// Training/evaluation invariants
// ---------------------------------------------------------------------------

pub fn train_eval_properties(seed: u64) {
    let frame = synth_multifreq(600, &[16.0], &[1.0], 0).unwrap();
    let data = prepare(&frame, (0.7, 0.2, 0.1), 16, 8).unwrap();
    let mut config = ModelConfig::new(16, 8, 1, FilterKind::PaiUni);
    config.ffn_hidden = 16;

    // Identical seed and data give bitwise identical parameters.
    let cfg = TrainConfig { max_epochs: 3, patience: 3, seed, ..Default::default() };
    let (a, history) = train_model(&config, &data, &cfg).unwrap();
    let (b, _) = train_model(&config, &data, &cfg).unwrap();
    for (pa, pb) in a.params.params().iter().zip(b.params.params()) {
        assert_eq!(pa.value.data(), pb.value.data(), "seed {seed}: {}", pa.name);
    }

    // Early stopping never returns a worse validation loss than observed.
    let observed_min = history
        .epochs
        .iter()
        .map(|e| e.val_mse)
        .fold(f64::INFINITY, f64::min);
    assert!(a.meta.val_mse <= observed_min + 1e-15, "seed {seed}");

    // Training strictly decreases the loss early on the single-tone task.
    let cfg = TrainConfig {
        max_epochs: 10,
        patience: 10,
        learning_rate: 0.001,
        batch_size: 16,
        seed,
        ..Default::default()
    };
    let (_, history) = train_model(&config, &data, &cfg).unwrap();
    for pair in history.epochs.windows(2) {
        assert!(
            pair[1].train_mse < pair[0].train_mse,
            "seed {seed}: epoch {} regressed",
            pair[1].epoch
        );
    }

    // Evaluation is deterministic and thread-count independent.
    let r1 = evaluate(&a, &frame, &data.splits.test, 16, 8, "tone", 1).unwrap();
    let r2 = evaluate(&a, &frame, &data.splits.test, 16, 8, "tone", 2).unwrap();
    assert_eq!(r1.mse, r2.mse, "seed {seed}");
    assert_eq!(r1.mae, r2.mae, "seed {seed}");
}

/// The full battery.
pub fn run_property_battery(seed: u64) {
    dsp_properties(seed);
    autodiff_properties(seed);
    model_properties(seed);
    data_properties(seed);
    train_eval_properties(seed);
}
