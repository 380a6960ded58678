//! Reverse-mode differentiation for the fixed forecasting graph.
//!
//! The architecture is a fixed pipeline, so there is no tape or operator
//! overloading: every primitive is a pair of functions, `*_fwd` and a
//! matching `*_bwd` that maps the output cotangent back to input/parameter
//! cotangents. Complex quantities are carried as separate real and
//! imaginary tensors, which keeps every gradient a plain real gradient
//! and is exactly what a finite-difference check verifies.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::dsp;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Tensors and parameters
// ---------------------------------------------------------------------------

/// Dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.fill(v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Last dimension, the "feature" axis for row-wise ops.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        if self.last_dim() == 0 { 0 } else { self.data.len() / self.last_dim() }
    }

    /// Same leading dimensions, new trailing dimension.
    pub fn shape_with_last(&self, last: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        *s.last_mut().expect("tensor has rank >= 1") = last;
        s
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add_assign {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }
}

/// A learnable tensor paired with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub name: String,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, name: name.into() }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Complex tensor stored as independent real and imaginary parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexPair {
    pub re: Tensor,
    pub im: Tensor,
}

impl ComplexPair {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { re: Tensor::zeros(shape), im: Tensor::zeros(shape) }
    }

    pub fn new(re: Tensor, im: Tensor) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::Shape(format!(
                "complex pair parts differ: {:?} vs {:?}",
                re.shape(),
                im.shape()
            )));
        }
        Ok(Self { re, im })
    }

    pub fn shape(&self) -> &[usize] {
        self.re.shape()
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Affine (matmul + bias) over the trailing dimension
// ---------------------------------------------------------------------------

/// `y = x W + b`, applied to every row of `x` viewed as `[rows, in]`.
pub fn affine_fwd(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (in_dim, out_dim) = match w.shape() {
        [i, o] => (*i, *o),
        s => return Err(Error::Shape(format!("affine weight must be 2-d, got {s:?}"))),
    };
    if x.last_dim() != in_dim {
        return Err(Error::Shape(format!(
            "affine: input last dim {} vs weight in dim {}",
            x.last_dim(),
            in_dim
        )));
    }
    if let Some(b) = b {
        if b.shape() != [out_dim] {
            return Err(Error::Shape(format!(
                "affine: bias shape {:?} vs out dim {}",
                b.shape(),
                out_dim
            )));
        }
    }
    let rows = x.rows();
    let mut y = Tensor::zeros(&x.shape_with_last(out_dim));
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for r in 0..rows {
        let xrow = &xd[r * in_dim..(r + 1) * in_dim];
        let yrow = &mut yd[r * out_dim..(r + 1) * out_dim];
        if let Some(b) = b {
            yrow.copy_from_slice(b.data());
        }
        for (k, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[k * out_dim..(k + 1) * out_dim];
            for (yo, &wv) in yrow.iter_mut().zip(wrow) {
                *yo += xv * wv;
            }
        }
    }
    Ok(y)
}

/// Backward of [`affine_fwd`]; accumulates into `dw`/`db` and returns `dx`.
pub fn affine_bwd(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    dw: &mut Tensor,
    db: Option<&mut Tensor>,
) -> Result<Tensor> {
    let (in_dim, out_dim) = (w.shape()[0], w.shape()[1]);
    if dy.last_dim() != out_dim || dy.rows() != x.rows() {
        return Err(Error::Shape("affine backward: cotangent shape".into()));
    }
    let rows = x.rows();
    let mut dx = Tensor::zeros(x.shape());
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();
    let dxd = dx.data_mut();
    let dwd = dw.data_mut();
    for r in 0..rows {
        let xrow = &xd[r * in_dim..(r + 1) * in_dim];
        let dyrow = &dyd[r * out_dim..(r + 1) * out_dim];
        let dxrow = &mut dxd[r * in_dim..(r + 1) * in_dim];
        for k in 0..in_dim {
            let wrow = &wd[k * out_dim..(k + 1) * out_dim];
            let mut acc = 0.0;
            for (dyv, wv) in dyrow.iter().zip(wrow) {
                acc += dyv * wv;
            }
            dxrow[k] = acc;
            let xv = xrow[k];
            if xv != 0.0 {
                let dwrow = &mut dwd[k * out_dim..(k + 1) * out_dim];
                for (dwv, &dyv) in dwrow.iter_mut().zip(dyrow) {
                    *dwv += xv * dyv;
                }
            }
        }
    }
    if let Some(db) = db {
        let dbd = db.data_mut();
        for r in 0..rows {
            for (o, dbv) in dbd.iter_mut().enumerate() {
                *dbv += dyd[r * out_dim + o];
            }
        }
    }
    Ok(dx)
}

// ---------------------------------------------------------------------------
// Complex elementwise multiply with tiled broadcasting
// ---------------------------------------------------------------------------

fn broadcast_tiles(a: &ComplexPair, b: &ComplexPair) -> Result<usize> {
    if a.len() == 0 || b.len() == 0 {
        return Err(Error::Shape("complex mul on empty tensor".into()));
    }
    // b's shape (ignoring leading 1s) must be a suffix of a's shape.
    let b_trim: Vec<usize> =
        b.shape().iter().copied().skip_while(|&d| d == 1).collect();
    let a_shape = a.shape();
    if b_trim.len() > a_shape.len()
        || a_shape[a_shape.len() - b_trim.len()..] != b_trim[..]
    {
        return Err(Error::Shape(format!(
            "cannot broadcast {:?} over {:?}",
            b.shape(),
            a.shape()
        )));
    }
    Ok(a.len() / b.len())
}

/// Elementwise complex product `c = a * b`, where `b` may broadcast over
/// leading dimensions of `a` (e.g. a `[1,F]` filter over a `[B,N,F]`
/// spectrum).
pub fn complex_mul_fwd(a: &ComplexPair, b: &ComplexPair) -> Result<ComplexPair> {
    let tiles = broadcast_tiles(a, b)?;
    let m = b.len();
    let mut out = ComplexPair::zeros(a.shape());
    let (are, aim) = (a.re.data(), a.im.data());
    let (bre, bim) = (b.re.data(), b.im.data());
    let ore = out.re.data_mut();
    let oim = out.im.data_mut();
    for t in 0..tiles {
        let base = t * m;
        for j in 0..m {
            let i = base + j;
            ore[i] = are[i] * bre[j] - aim[i] * bim[j];
            oim[i] = are[i] * bim[j] + aim[i] * bre[j];
        }
    }
    Ok(out)
}

/// Backward of [`complex_mul_fwd`]: returns `da` and accumulates the
/// broadcast-reduced cotangent into `db`.
pub fn complex_mul_bwd(
    a: &ComplexPair,
    b: &ComplexPair,
    dc: &ComplexPair,
    db: &mut ComplexPair,
) -> Result<ComplexPair> {
    if dc.shape() != a.shape() || db.shape() != b.shape() {
        return Err(Error::Shape("complex mul backward: cotangent shape".into()));
    }
    let tiles = broadcast_tiles(a, b)?;
    let m = b.len();
    let mut da = ComplexPair::zeros(a.shape());
    let (are, aim) = (a.re.data(), a.im.data());
    let (bre, bim) = (b.re.data(), b.im.data());
    let (cre, cim) = (dc.re.data(), dc.im.data());
    let dare = da.re.data_mut();
    let daim = da.im.data_mut();
    let dbre = db.re.data_mut();
    let dbim = db.im.data_mut();
    for t in 0..tiles {
        let base = t * m;
        for j in 0..m {
            let i = base + j;
            // da = dc * conj(b); db = dc * conj(a), reduced over tiles.
            dare[i] = cre[i] * bre[j] + cim[i] * bim[j];
            daim[i] = -cre[i] * bim[j] + cim[i] * bre[j];
            dbre[j] += cre[i] * are[i] + cim[i] * aim[i];
            dbim[j] += -cre[i] * aim[i] + cim[i] * are[i];
        }
    }
    Ok(da)
}

// ---------------------------------------------------------------------------
// Batched real FFT nodes
// ---------------------------------------------------------------------------

/// Real forward FFT over the trailing dimension, batched over all leading
/// dimensions. Output carries `L/2 + 1` bins.
pub fn rfft_fwd(x: &Tensor) -> Result<ComplexPair> {
    let len = x.last_dim();
    if len == 0 {
        return Err(Error::Shape("rfft over empty trailing dimension".into()));
    }
    let nbins = dsp::half_bins(len);
    let rows = x.rows();
    let mut out = ComplexPair::zeros(&x.shape_with_last(nbins));
    let plan = dsp::plan(len, false);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let xd = x.data();
    let ore = out.re.data_mut();
    let oim = out.im.data_mut();
    for r in 0..rows {
        for (dst, &src) in buf.iter_mut().zip(&xd[r * len..(r + 1) * len]) {
            *dst = Complex::new(src, 0.0);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        let base = r * nbins;
        for k in 0..nbins {
            ore[base + k] = buf[k].re;
            oim[base + k] = buf[k].im;
        }
        // Real-input DFT has exactly real DC and Nyquist bins.
        oim[base] = 0.0;
        if len % 2 == 0 {
            oim[base + nbins - 1] = 0.0;
        }
    }
    Ok(out)
}

/// Adjoint of [`rfft_fwd`]: maps a half-spectrum cotangent back to the
/// time domain.
pub fn rfft_bwd(d: &ComplexPair, len: usize) -> Result<Tensor> {
    let nbins = dsp::half_bins(len);
    if d.re.last_dim() != nbins {
        return Err(Error::Shape(format!(
            "rfft backward: {} bins for length {}",
            d.re.last_dim(),
            len
        )));
    }
    let rows = d.re.rows();
    let mut out = Tensor::zeros(&d.re.shape_with_last(len));
    let plan = dsp::plan(len, true);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let (dre, dim) = (d.re.data(), d.im.data());
    let od = out.data_mut();
    for r in 0..rows {
        buf.fill(Complex::new(0.0, 0.0));
        let base = r * nbins;
        for k in 0..nbins {
            buf[k] = Complex::new(dre[base + k], dim[base + k]);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in od[r * len..(r + 1) * len].iter_mut().zip(&buf) {
            *o = c.re;
        }
    }
    Ok(out)
}

/// Inverse real FFT (`1/L` normalized) over the trailing dimension. The
/// full spectrum is implied by conjugate symmetry.
pub fn irfft_fwd(s: &ComplexPair, len: usize) -> Result<Tensor> {
    let nbins = dsp::half_bins(len);
    if s.re.last_dim() != nbins {
        return Err(Error::Shape(format!(
            "irfft: {} bins for length {}",
            s.re.last_dim(),
            len
        )));
    }
    let rows = s.re.rows();
    let mut out = Tensor::zeros(&s.re.shape_with_last(len));
    let plan = dsp::plan(len, true);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let (sre, sim) = (s.re.data(), s.im.data());
    let od = out.data_mut();
    let scale = 1.0 / len as f64;
    for r in 0..rows {
        let base = r * nbins;
        for k in 0..nbins {
            buf[k] = Complex::new(sre[base + k], sim[base + k]);
        }
        for k in nbins..len {
            buf[k] = buf[len - k].conj();
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in od[r * len..(r + 1) * len].iter_mut().zip(&buf) {
            *o = c.re * scale;
        }
    }
    Ok(out)
}

/// Adjoint of [`irfft_fwd`]: a forward transform scaled by `1/L`, with
/// factor-2 weighting on bins that stand for a conjugate pair.
pub fn irfft_bwd(g: &Tensor) -> Result<ComplexPair> {
    let len = g.last_dim();
    if len == 0 {
        return Err(Error::Shape("irfft backward over empty dimension".into()));
    }
    let nbins = dsp::half_bins(len);
    let rows = g.rows();
    let mut out = ComplexPair::zeros(&g.shape_with_last(nbins));
    let plan = dsp::plan(len, false);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let gd = g.data();
    let ore = out.re.data_mut();
    let oim = out.im.data_mut();
    let scale = 1.0 / len as f64;
    for r in 0..rows {
        for (dst, &src) in buf.iter_mut().zip(&gd[r * len..(r + 1) * len]) {
            *dst = Complex::new(src, 0.0);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        let base = r * nbins;
        for k in 0..nbins {
            let pairs_two = k != 0 && !(len % 2 == 0 && k == nbins - 1);
            let w = if pairs_two { 2.0 * scale } else { scale };
            ore[base + k] = buf[k].re * w;
            oim[base + k] = buf[k].im * w;
        }
        // DC/Nyquist imaginary parts never reach the output; keep their
        // cotangent exactly zero.
        oim[base] = 0.0;
        if len % 2 == 0 {
            oim[base + nbins - 1] = 0.0;
        }
    }
    Ok(out)
}

/// Real part of a full-length inverse DFT (`1/D` normalized) of an
/// unconstrained complex vector. Used where a filtered spectrum has no
/// symmetry guarantee.
pub fn inv_dft_real_fwd(s: &ComplexPair) -> Result<Tensor> {
    let len = s.re.last_dim();
    if len == 0 {
        return Err(Error::Shape("inverse dft over empty dimension".into()));
    }
    let rows = s.re.rows();
    let mut out = Tensor::zeros(s.shape());
    let plan = dsp::plan(len, true);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let (sre, sim) = (s.re.data(), s.im.data());
    let od = out.data_mut();
    let scale = 1.0 / len as f64;
    for r in 0..rows {
        let base = r * len;
        for k in 0..len {
            buf[k] = Complex::new(sre[base + k], sim[base + k]);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (o, c) in od[base..base + len].iter_mut().zip(&buf) {
            *o = c.re * scale;
        }
    }
    Ok(out)
}

/// Adjoint of [`inv_dft_real_fwd`]: forward DFT of the real cotangent,
/// scaled by `1/D`.
pub fn inv_dft_real_bwd(g: &Tensor) -> Result<ComplexPair> {
    let len = g.last_dim();
    if len == 0 {
        return Err(Error::Shape("inverse dft backward over empty dimension".into()));
    }
    let rows = g.rows();
    let mut out = ComplexPair::zeros(g.shape());
    let plan = dsp::plan(len, false);
    let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0, 0.0); len];
    let gd = g.data();
    let ore = out.re.data_mut();
    let oim = out.im.data_mut();
    let scale = 1.0 / len as f64;
    for r in 0..rows {
        for (dst, &src) in buf.iter_mut().zip(&gd[r * len..(r + 1) * len]) {
            *dst = Complex::new(src, 0.0);
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        let base = r * len;
        for k in 0..len {
            ore[base + k] = buf[k].re * scale;
            oim[base + k] = buf[k].im * scale;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Scalar nonlinearity applied independently to real and imaginary parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Gelu,
    Identity,
}

fn act_value(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
        Activation::Gelu => {
            // tanh form; its exact derivative is used below.
            let u = GELU_C * (v + 0.044715 * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        }
        Activation::Identity => v,
    }
}

fn act_deriv(kind: Activation, v: f64) -> f64 {
    match kind {
        // Subgradient 0 at exactly 0.
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Gelu => {
            let u = GELU_C * (v + 0.044715 * v * v * v);
            let t = u.tanh();
            let sech2 = 1.0 - t * t;
            0.5 * (1.0 + t) + 0.5 * v * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * v * v)
        }
        Activation::Identity => 1.0,
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Apply `kind` to both parts of a complex pair.
pub fn split_act_fwd(a: &ComplexPair, kind: Activation) -> ComplexPair {
    let map = |t: &Tensor| {
        let data = t.data().iter().map(|&v| act_value(kind, v)).collect();
        Tensor::from_vec(t.shape(), data).expect("same shape")
    };
    ComplexPair { re: map(&a.re), im: map(&a.im) }
}

/// Backward of [`split_act_fwd`]; needs the forward *input*.
pub fn split_act_bwd(input: &ComplexPair, d: &ComplexPair, kind: Activation) -> Result<ComplexPair> {
    if input.shape() != d.shape() {
        return Err(Error::Shape("split activation backward: cotangent shape".into()));
    }
    let map = |t: &Tensor, dt: &Tensor| {
        let data = t
            .data()
            .iter()
            .zip(dt.data())
            .map(|(&v, &g)| act_deriv(kind, v) * g)
            .collect();
        Tensor::from_vec(t.shape(), data).expect("same shape")
    };
    Ok(ComplexPair { re: map(&input.re, &d.re), im: map(&input.im, &d.im) })
}

/// Plain real relu used by the feed-forward head.
pub fn relu_fwd(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Backward of [`relu_fwd`]; needs the forward input.
pub fn relu_bwd(input: &Tensor, d: &Tensor) -> Result<Tensor> {
    if input.shape() != d.shape() {
        return Err(Error::Shape("relu backward: cotangent shape".into()));
    }
    let data = input
        .data()
        .iter()
        .zip(d.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Anything with parameters and a scalar loss that can be evaluated with
/// and without gradient accumulation.
pub trait DiffModel {
    /// Forward pass only; must not touch gradients.
    fn loss(&mut self) -> Result<f64>;
    /// Zero gradients, then forward + backward.
    fn loss_and_grad(&mut self) -> Result<f64>;
    /// Stable-order access to every parameter.
    fn params_mut(&mut self) -> Vec<&mut Param>;
}

/// Per-parameter-group outcome of a finite-difference check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub groups: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.groups.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }
}

/// Compare analytic gradients against central finite differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)` for every coordinate of every
/// parameter. Relative error uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator.
pub fn grad_check<M: DiffModel>(model: &mut M, eps: f64) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    let base = model.loss_and_grad()?;
    if !base.is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    let analytic: Vec<(String, Vec<f64>)> = model
        .params_mut()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();
    let mut groups = Vec::with_capacity(analytic.len());
    for (gi, (name, grads)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for ci in 0..grads.len() {
            let orig = model.params_mut()[gi].value.data()[ci];
            model.params_mut()[gi].value.data_mut()[ci] = orig + eps;
            let f_plus = model.loss()?;
            model.params_mut()[gi].value.data_mut()[ci] = orig - eps;
            let f_minus = model.loss()?;
            model.params_mut()[gi].value.data_mut()[ci] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::NonFinite(format!("grad_check loss at {name}[{ci}]")));
            }
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = grads[ci];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        groups.push((name.clone(), worst));
    }
    Ok(GradCheckReport { groups })
}
