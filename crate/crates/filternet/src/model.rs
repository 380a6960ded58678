//! The forecaster: per-window instance normalization wrapped around a
//! learnable frequency filter block and a feed-forward head.
//!
//! Data flow for an input window `X in R^{B x N x L}`:
//!
//! ```text
//! X --norm--> Z --rfft--> spectrum --filter--> spectrum' --inverse--> S
//!   --head--> P --inverse norm--> Yhat in R^{B x N x tau}
//! ```
//!
//! Two filter blocks are provided. The plain filter multiplies the half
//! spectrum by a directly learnable complex weight, either shared across
//! channels (`pai_uni`) or per channel (`pai_ind`). The contextual filter
//! (`tex`) embeds the spectrum with a complex affine map, derives a
//! data-dependent filter from it through K learnable complex weight
//! vectors and a split activation, and applies that filter back onto the
//! embedding. Filters parameterize `F = L/2 + 1` half-spectrum bins; for
//! real signals this is equivalent to a full-length complex filter by
//! conjugate symmetry and halves the parameter count.

use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    affine_bwd, affine_fwd, complex_mul_bwd, complex_mul_fwd, inv_dft_real_bwd, inv_dft_real_fwd,
    irfft_bwd, irfft_fwd, relu_bwd, relu_fwd, rfft_bwd, rfft_fwd, split_act_bwd, split_act_fwd,
    Activation, ComplexPair, DiffModel, Param, Tensor,
};
use crate::dsp;
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Which filter block the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// Plain filter, one weight vector shared by all channels.
    PaiUni,
    /// Plain filter, one weight vector per channel.
    PaiInd,
    /// Contextual filter generated from the input spectrum.
    Tex,
}

/// Structural ablations used by the evaluation suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Drop instance normalization and its inverse.
    NoNorm,
    /// Replace the filter block with the identity.
    NoFilter,
    /// Replace the feed-forward head with a single bias-free linear map.
    NoFfn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Lookback window length L.
    pub lookback: usize,
    /// Forecast horizon tau.
    pub horizon: usize,
    /// Channel count N.
    pub channels: usize,
    pub filter_kind: FilterKind,
    /// Hidden width of the feed-forward head.
    pub ffn_hidden: usize,
    /// Embedding width D of the contextual filter; defaults to L so the
    /// filter bandwidth always spans the lookback window.
    pub embed_dim: Option<usize>,
    /// Number K of stacked complex weight vectors in the contextual filter.
    pub num_weights: usize,
    /// Split activation of the contextual filter.
    pub activation: Activation,
    /// Lower clamp for per-window standard deviations.
    pub norm_epsilon: f64,
    #[serde(default)]
    pub ablation: Ablation,
}

impl ModelConfig {
    pub fn new(lookback: usize, horizon: usize, channels: usize, kind: FilterKind) -> Self {
        Self {
            lookback,
            horizon,
            channels,
            filter_kind: kind,
            ffn_hidden: 128,
            embed_dim: None,
            num_weights: 3,
            activation: Activation::Relu,
            norm_epsilon: 1e-5,
            ablation: Ablation::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.channels == 0 || self.ffn_hidden == 0 {
            return Err(Error::Config(
                "lookback, horizon, channels, and ffn_hidden must all be >= 1".into(),
            ));
        }
        if self.filter_kind == FilterKind::Tex {
            if self.embed() == 0 || self.num_weights == 0 {
                return Err(Error::Config("tex filter needs embed_dim >= 1 and num_weights >= 1".into()));
            }
        }
        if !(self.norm_epsilon > 0.0) {
            return Err(Error::Config("norm_epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Half-spectrum bin count F; filters always span the full lookback
    /// bandwidth.
    pub fn bins(&self) -> usize {
        dsp::half_bins(self.lookback)
    }

    /// Contextual embedding width D (defaults to the lookback length).
    pub fn embed(&self) -> usize {
        self.embed_dim.unwrap_or(self.lookback)
    }

    /// Input width of the head: the filter block output length.
    pub fn head_in(&self) -> usize {
        if self.ablation == Ablation::NoFilter {
            return self.lookback;
        }
        match self.filter_kind {
            FilterKind::PaiUni | FilterKind::PaiInd => self.lookback,
            FilterKind::Tex => self.embed(),
        }
    }
}

// ---------------------------------------------------------------------------
// Instance normalization
// ---------------------------------------------------------------------------

/// Per-window, per-channel statistics captured by [`instance_norm`] so the
/// prediction can be mapped back to the input's scale.
#[derive(Debug, Clone)]
pub struct RevInState {
    /// Mean over the time axis, `[B, N]`.
    pub mean: Tensor,
    /// Population standard deviation over the time axis, clamped from
    /// below by epsilon, `[B, N]`.
    pub std: Tensor,
    /// Which entries hit the clamp (their std carries no gradient).
    clamped: Vec<bool>,
}

/// Normalize each `[b, n, :]` window to zero mean and unit (population)
/// standard deviation, clamping the deviation at `eps`.
pub fn instance_norm(x: &Tensor, eps: f64) -> Result<(Tensor, RevInState)> {
    let shape = x.shape();
    if shape.len() != 3 {
        return Err(Error::Shape(format!("instance_norm expects [B,N,L], got {shape:?}")));
    }
    let (b, n, len) = (shape[0], shape[1], shape[2]);
    if len == 0 {
        return Err(Error::Shape("instance_norm: empty time axis".into()));
    }
    let rows = b * n;
    let mut mean = Tensor::zeros(&[b, n]);
    let mut std = Tensor::zeros(&[b, n]);
    let mut clamped = vec![false; rows];
    let mut z = Tensor::zeros(shape);
    let xd = x.data();
    let md = mean.data_mut();
    let sd = std.data_mut();
    let zd = z.data_mut();
    for r in 0..rows {
        let row = &xd[r * len..(r + 1) * len];
        let mu = row.iter().sum::<f64>() / len as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / len as f64;
        let raw = var.sqrt();
        let s = if raw > eps {
            raw
        } else {
            clamped[r] = true;
            eps
        };
        md[r] = mu;
        sd[r] = s;
        for (o, &v) in zd[r * len..(r + 1) * len].iter_mut().zip(row) {
            *o = (v - mu) / s;
        }
    }
    Ok((z, RevInState { mean, std, clamped }))
}

/// Map a normalized prediction back through the statistics captured by the
/// paired [`instance_norm`] call: `P * std + mean` per channel.
pub fn inverse_norm(p: &Tensor, state: &RevInState) -> Result<Tensor> {
    let shape = p.shape();
    if shape.len() != 3 || &shape[..2] != state.mean.shape() {
        return Err(Error::Shape(format!(
            "inverse_norm: prediction {:?} vs state {:?}",
            shape,
            state.mean.shape()
        )));
    }
    let horizon = shape[2];
    let rows = shape[0] * shape[1];
    let mut out = Tensor::zeros(shape);
    let pd = p.data();
    let od = out.data_mut();
    let md = state.mean.data();
    let sd = state.std.data();
    for r in 0..rows {
        for t in 0..horizon {
            od[r * horizon + t] = pd[r * horizon + t] * sd[r] + md[r];
        }
    }
    Ok(out)
}

/// Backward of [`inverse_norm`]: returns the cotangent of the normalized
/// prediction plus the cotangents of the statistics.
fn inverse_norm_bwd(dyhat: &Tensor, p: &Tensor, state: &RevInState) -> (Tensor, Tensor, Tensor) {
    let horizon = p.last_dim();
    let rows = p.rows();
    let mut dp = Tensor::zeros(p.shape());
    let mut dmean = Tensor::zeros(state.mean.shape());
    let mut dstd = Tensor::zeros(state.std.shape());
    let dyd = dyhat.data();
    let pd = p.data();
    let sd = state.std.data();
    let dpd = dp.data_mut();
    let dmd = dmean.data_mut();
    let dsd = dstd.data_mut();
    for r in 0..rows {
        let mut msum = 0.0;
        let mut ssum = 0.0;
        for t in 0..horizon {
            let g = dyd[r * horizon + t];
            dpd[r * horizon + t] = g * sd[r];
            msum += g;
            ssum += g * pd[r * horizon + t];
        }
        dmd[r] = msum;
        dsd[r] = ssum;
    }
    (dp, dmean, dstd)
}

/// Backward of [`instance_norm`], folding in statistic cotangents coming
/// from the inverse-normalization side. Gradient flows through the mean
/// and (unclamped) standard deviation.
fn instance_norm_bwd(
    dz: &Tensor,
    z: &Tensor,
    state: &RevInState,
    dmean_extra: &Tensor,
    dstd_extra: &Tensor,
) -> Tensor {
    let len = z.last_dim();
    let rows = z.rows();
    let mut dx = Tensor::zeros(z.shape());
    let dzd = dz.data();
    let zd = z.data();
    let sd = state.std.data();
    let dme = dmean_extra.data();
    let dse = dstd_extra.data();
    let dxd = dx.data_mut();
    let inv_len = 1.0 / len as f64;
    for r in 0..rows {
        let s = sd[r];
        let mut dsum = 0.0;
        let mut zdot = 0.0;
        for t in 0..len {
            dsum += dzd[r * len + t];
            zdot += dzd[r * len + t] * zd[r * len + t];
        }
        let dmean_total = dme[r] - dsum / s;
        let dstd_total = dse[r] - zdot / s;
        let through_std = !state.clamped[r];
        for t in 0..len {
            let i = r * len + t;
            let mut g = dzd[i] / s + dmean_total * inv_len;
            if through_std {
                g += dstd_total * zd[i] * inv_len;
            }
            dxd[i] = g;
        }
    }
    dx
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Learnable pieces of the filter block.
#[derive(Debug, Clone)]
pub enum FilterParams {
    /// Plain filter weights, `[rows, F]` with `rows = 1` (shared) or `N`.
    Pai { re: Param, im: Param },
    /// Contextual filter: complex affine embedding `F -> D` plus K complex
    /// weight vectors of length D.
    Tex {
        embed_w_re: Param,
        embed_w_im: Param,
        embed_b_re: Param,
        embed_b_im: Param,
        weights: Vec<(Param, Param)>,
    },
    /// Identity filter block (structural ablation).
    Bypass,
}

/// Learnable pieces of the prediction head.
#[derive(Debug, Clone)]
pub enum HeadParams {
    /// One hidden layer with relu; weights shared by every channel.
    Ffn { w1: Param, b1: Param, w2: Param, b2: Param },
    /// Single bias-free linear map (structural ablation).
    Linear { w: Param },
}

/// All learnable parameters of a model instance.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub filter: FilterParams,
    pub head: HeadParams,
}

fn uniform_tensor(rng: &mut ChaCha20Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("sized data")
}

impl ModelParams {
    /// Initialize parameters from a seed. Complex weights start uniform in
    /// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`; biases start at zero; the
    /// trailing contextual weight vectors start at exactly one so their
    /// product begins as a single random vector.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let bins = config.bins();
        let filter = if config.ablation == Ablation::NoFilter {
            FilterParams::Bypass
        } else {
            match config.filter_kind {
                FilterKind::PaiUni | FilterKind::PaiInd => {
                    let rows = if config.filter_kind == FilterKind::PaiUni {
                        1
                    } else {
                        config.channels
                    };
                    let bound = 1.0 / (bins as f64).sqrt();
                    FilterParams::Pai {
                        re: Param::new("filter.re", uniform_tensor(&mut rng, &[rows, bins], bound)),
                        im: Param::new("filter.im", uniform_tensor(&mut rng, &[rows, bins], bound)),
                    }
                }
                FilterKind::Tex => {
                    let d = config.embed();
                    let bound = 1.0 / (bins as f64).sqrt();
                    let wb = 1.0 / (d as f64).sqrt();
                    let mut weights = Vec::with_capacity(config.num_weights);
                    for i in 0..config.num_weights {
                        let (re, im) = if i == 0 {
                            (
                                uniform_tensor(&mut rng, &[1, d], wb),
                                uniform_tensor(&mut rng, &[1, d], wb),
                            )
                        } else {
                            let mut ones = Tensor::zeros(&[1, d]);
                            ones.fill(1.0);
                            (ones, Tensor::zeros(&[1, d]))
                        };
                        weights.push((
                            Param::new(format!("weight.{i}.re"), re),
                            Param::new(format!("weight.{i}.im"), im),
                        ));
                    }
                    FilterParams::Tex {
                        embed_w_re: Param::new("embed.w.re", uniform_tensor(&mut rng, &[bins, d], bound)),
                        embed_w_im: Param::new("embed.w.im", uniform_tensor(&mut rng, &[bins, d], bound)),
                        embed_b_re: Param::new("embed.b.re", Tensor::zeros(&[d])),
                        embed_b_im: Param::new("embed.b.im", Tensor::zeros(&[d])),
                        weights,
                    }
                }
            }
        };
        let head_in = config.head_in();
        let head = if config.ablation == Ablation::NoFfn {
            let bound = 1.0 / (head_in as f64).sqrt();
            HeadParams::Linear {
                w: Param::new("linear.w", uniform_tensor(&mut rng, &[head_in, config.horizon], bound)),
            }
        } else {
            let h = config.ffn_hidden;
            HeadParams::Ffn {
                w1: Param::new(
                    "ffn.w1",
                    uniform_tensor(&mut rng, &[head_in, h], 1.0 / (head_in as f64).sqrt()),
                ),
                b1: Param::new("ffn.b1", Tensor::zeros(&[h])),
                w2: Param::new(
                    "ffn.w2",
                    uniform_tensor(&mut rng, &[h, config.horizon], 1.0 / (h as f64).sqrt()),
                ),
                b2: Param::new("ffn.b2", Tensor::zeros(&[config.horizon])),
            }
        };
        Ok(Self { filter, head })
    }

    /// Every parameter in a stable order.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        match &mut self.filter {
            FilterParams::Pai { re, im } => {
                out.push(re);
                out.push(im);
            }
            FilterParams::Tex { embed_w_re, embed_w_im, embed_b_re, embed_b_im, weights } => {
                out.push(embed_w_re);
                out.push(embed_w_im);
                out.push(embed_b_re);
                out.push(embed_b_im);
                for (re, im) in weights {
                    out.push(re);
                    out.push(im);
                }
            }
            FilterParams::Bypass => {}
        }
        match &mut self.head {
            HeadParams::Ffn { w1, b1, w2, b2 } => {
                out.push(w1);
                out.push(b1);
                out.push(w2);
                out.push(b2);
            }
            HeadParams::Linear { w } => out.push(w),
        }
        out
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = Vec::new();
        match &self.filter {
            FilterParams::Pai { re, im } => {
                out.push(re);
                out.push(im);
            }
            FilterParams::Tex { embed_w_re, embed_w_im, embed_b_re, embed_b_im, weights } => {
                out.push(embed_w_re);
                out.push(embed_w_im);
                out.push(embed_b_re);
                out.push(embed_b_im);
                for (re, im) in weights {
                    out.push(re);
                    out.push(im);
                }
            }
            FilterParams::Bypass => {}
        }
        match &self.head {
            HeadParams::Ffn { w1, b1, w2, b2 } => {
                out.push(w1);
                out.push(b1);
                out.push(w2);
                out.push(b2);
            }
            HeadParams::Linear { w } => out.push(w),
        }
        out
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

// ---------------------------------------------------------------------------
// Filter blocks and head as standalone operations
// ---------------------------------------------------------------------------

/// Plain filter: `S = irfft(rfft(Z) * H)` per channel. `weights` rows
/// broadcast over channels when shared.
pub fn pai_filter_forward(z: &Tensor, re: &Tensor, im: &Tensor) -> Result<Tensor> {
    let len = z.last_dim();
    if re.last_dim() != dsp::half_bins(len) {
        return Err(Error::Shape(format!(
            "filter has {} bins but lookback {} needs {}",
            re.last_dim(),
            len,
            dsp::half_bins(len)
        )));
    }
    let h = ComplexPair::new(re.clone(), im.clone())?;
    let spec = rfft_fwd(z)?;
    let filtered = complex_mul_fwd(&spec, &h)?;
    irfft_fwd(&filtered, len)
}

/// Contextual filter forward pass. Returns `S in R^{B x N x D}` along with
/// the intermediates needed for the backward pass.
struct TexTrace {
    spec: ComplexPair,
    embed: ComplexPair,
    w_eff: ComplexPair,
    pre_act: ComplexPair,
    gate: ComplexPair,
}

fn tex_forward(
    z: &Tensor,
    params: &FilterParams,
    activation: Activation,
) -> Result<(Tensor, TexTrace)> {
    let FilterParams::Tex { embed_w_re, embed_w_im, embed_b_re, embed_b_im, weights } = params
    else {
        return Err(Error::Config("tex forward on non-tex parameters".into()));
    };
    let spec = rfft_fwd(z)?;
    let embed = complex_affine_fwd(
        &spec,
        &embed_w_re.value,
        &embed_w_im.value,
        &embed_b_re.value,
        &embed_b_im.value,
    )?;
    let w_eff = stack_product(weights)?;
    let pre_act = complex_mul_fwd(&embed, &w_eff)?;
    let gate = split_act_fwd(&pre_act, activation);
    let filtered = complex_mul_fwd(&embed, &gate)?;
    let s = inv_dft_real_fwd(&filtered)?;
    Ok((s, TexTrace { spec, embed, w_eff, pre_act, gate }))
}

/// Contextual filter as a plain operation (intermediates discarded).
pub fn tex_filter_forward(z: &Tensor, params: &FilterParams, activation: Activation) -> Result<Tensor> {
    Ok(tex_forward(z, params, activation)?.0)
}

/// Elementwise complex product of the K stacked weight vectors.
fn stack_product(weights: &[(Param, Param)]) -> Result<ComplexPair> {
    let first = &weights[0];
    let mut acc = ComplexPair::new(first.0.value.clone(), first.1.value.clone())?;
    for (re, im) in &weights[1..] {
        let w = ComplexPair::new(re.value.clone(), im.value.clone())?;
        acc = complex_mul_fwd(&acc, &w)?;
    }
    Ok(acc)
}

/// Complex affine `y = x W + b` over the trailing dimension, built from
/// four real matmuls.
fn complex_affine_fwd(
    x: &ComplexPair,
    w_re: &Tensor,
    w_im: &Tensor,
    b_re: &Tensor,
    b_im: &Tensor,
) -> Result<ComplexPair> {
    let mut re = affine_fwd(&x.re, w_re, Some(b_re))?;
    let im_part = affine_fwd(&x.im, w_im, None)?;
    for (a, b) in re.data_mut().iter_mut().zip(im_part.data()) {
        *a -= b;
    }
    let mut im = affine_fwd(&x.re, w_im, Some(b_im))?;
    let re_part = affine_fwd(&x.im, w_re, None)?;
    for (a, b) in im.data_mut().iter_mut().zip(re_part.data()) {
        *a += b;
    }
    ComplexPair::new(re, im)
}

#[allow(clippy::too_many_arguments)]
fn complex_affine_bwd(
    x: &ComplexPair,
    w_re: &Tensor,
    w_im: &Tensor,
    dy: &ComplexPair,
    dw_re: &mut Tensor,
    dw_im: &mut Tensor,
    db_re: &mut Tensor,
    db_im: &mut Tensor,
) -> Result<ComplexPair> {
    let mut neg_dy_re = dy.re.clone();
    neg_dy_re.scale(-1.0);

    // y.re = x.re W.re - x.im W.im + b.re
    let mut dx_re = affine_bwd(&x.re, w_re, &dy.re, dw_re, Some(db_re))?;
    let dx_im_a = affine_bwd(&x.im, w_im, &neg_dy_re, dw_im, None)?;
    // y.im = x.re W.im + x.im W.re + b.im
    let dx_re_b = affine_bwd(&x.re, w_im, &dy.im, dw_im, Some(db_im))?;
    let mut dx_im = affine_bwd(&x.im, w_re, &dy.im, dw_re, None)?;

    dx_re.add_assign(&dx_re_b)?;
    dx_im.add_assign(&dx_im_a)?;
    Ok(ComplexPair::new(dx_re, dx_im)?)
}

/// Feed-forward head: `P = relu(S W1 + b1) W2 + b2`, identical weights for
/// every channel row.
pub fn ffn_forward(s: &Tensor, head: &HeadParams) -> Result<Tensor> {
    match head {
        HeadParams::Ffn { w1, b1, w2, b2 } => {
            let hidden = relu_fwd(&affine_fwd(s, &w1.value, Some(&b1.value))?);
            affine_fwd(&hidden, &w2.value, Some(&b2.value))
        }
        HeadParams::Linear { w } => affine_fwd(s, &w.value, None),
    }
}

// ---------------------------------------------------------------------------
// The model
// ---------------------------------------------------------------------------

/// Cached intermediates of one forward pass, consumed by `backward`.
#[derive(Default)]
pub struct Workspace {
    z: Option<Tensor>,
    state: Option<RevInState>,
    pai_spec: Option<ComplexPair>,
    tex: Option<TexTrace>,
    s: Option<Tensor>,
    hidden_pre: Option<Tensor>,
    hidden: Option<Tensor>,
    p: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct FilterNet {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl FilterNet {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Self {
        Self { config, params }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 3 || shape[1] != self.config.channels || shape[2] != self.config.lookback {
            return Err(Error::Shape(format!(
                "input {:?} does not match [B, {}, {}]",
                shape, self.config.channels, self.config.lookback
            )));
        }
        Ok(())
    }

    /// Inference forward pass, `[B,N,L] -> [B,N,tau]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut ws = Workspace::default();
        self.forward_cached(x, &mut ws)
    }

    /// Forward pass that records the intermediates `backward` needs.
    pub fn forward_cached(&self, x: &Tensor, ws: &mut Workspace) -> Result<Tensor> {
        self.check_input(x)?;
        let no_norm = self.config.ablation == Ablation::NoNorm;
        let z = if no_norm {
            ws.state = None;
            x.clone()
        } else {
            let (z, state) = instance_norm(x, self.config.norm_epsilon).map_err(|e| e.in_stage("norm"))?;
            ws.state = Some(state);
            z
        };

        let s = match &self.params.filter {
            FilterParams::Bypass => {
                ws.pai_spec = None;
                ws.tex = None;
                z.clone()
            }
            FilterParams::Pai { re, im } => {
                let h = ComplexPair::new(re.value.clone(), im.value.clone())?;
                let spec = rfft_fwd(&z).map_err(|e| e.in_stage("filter"))?;
                let filtered = complex_mul_fwd(&spec, &h).map_err(|e| e.in_stage("filter"))?;
                let s = irfft_fwd(&filtered, self.config.lookback).map_err(|e| e.in_stage("filter"))?;
                ws.pai_spec = Some(spec);
                ws.tex = None;
                s
            }
            tex @ FilterParams::Tex { .. } => {
                let (s, trace) =
                    tex_forward(&z, tex, self.config.activation).map_err(|e| e.in_stage("filter"))?;
                ws.pai_spec = None;
                ws.tex = Some(trace);
                s
            }
        };

        let p = match &self.params.head {
            HeadParams::Ffn { w1, b1, w2, b2 } => {
                let pre = affine_fwd(&s, &w1.value, Some(&b1.value)).map_err(|e| e.in_stage("head"))?;
                let hidden = relu_fwd(&pre);
                let p = affine_fwd(&hidden, &w2.value, Some(&b2.value)).map_err(|e| e.in_stage("head"))?;
                ws.hidden_pre = Some(pre);
                ws.hidden = Some(hidden);
                p
            }
            HeadParams::Linear { w } => {
                ws.hidden_pre = None;
                ws.hidden = None;
                affine_fwd(&s, &w.value, None).map_err(|e| e.in_stage("head"))?
            }
        };

        let yhat = if no_norm {
            p.clone()
        } else {
            inverse_norm(&p, ws.state.as_ref().expect("state cached"))
                .map_err(|e| e.in_stage("inverse_norm"))?
        };
        ws.z = Some(z);
        ws.s = Some(s);
        ws.p = Some(p);
        Ok(yhat)
    }

    /// Backward pass from the prediction cotangent; accumulates parameter
    /// gradients and returns the input cotangent.
    pub fn backward(&mut self, dyhat: &Tensor, ws: &Workspace) -> Result<Tensor> {
        let z = ws.z.as_ref().ok_or_else(|| Error::Config("backward before forward".into()))?;
        let s = ws.s.as_ref().expect("forward cached s");
        let p = ws.p.as_ref().expect("forward cached p");
        let no_norm = self.config.ablation == Ablation::NoNorm;

        let (dp, dmean, dstd) = if no_norm {
            (dyhat.clone(), Tensor::zeros(&[0]), Tensor::zeros(&[0]))
        } else {
            let state = ws.state.as_ref().expect("state cached");
            inverse_norm_bwd(dyhat, p, state)
        };

        let ds = match &mut self.params.head {
            HeadParams::Ffn { w1, b1, w2, b2 } => {
                let hidden = ws.hidden.as_ref().expect("hidden cached");
                let pre = ws.hidden_pre.as_ref().expect("pre cached");
                let dhidden = affine_bwd(hidden, &w2.value, &dp, &mut w2.grad, Some(&mut b2.grad))?;
                let dpre = relu_bwd(pre, &dhidden)?;
                affine_bwd(s, &w1.value, &dpre, &mut w1.grad, Some(&mut b1.grad))?
            }
            HeadParams::Linear { w } => affine_bwd(s, &w.value, &dp, &mut w.grad, None)?,
        };

        let dz = match &mut self.params.filter {
            FilterParams::Bypass => ds,
            FilterParams::Pai { re, im } => {
                let spec = ws.pai_spec.as_ref().expect("spec cached");
                let h = ComplexPair::new(re.value.clone(), im.value.clone())?;
                let dfiltered = irfft_bwd(&ds)?;
                let mut dh = ComplexPair::new(
                    std::mem::replace(&mut re.grad, Tensor::zeros(&[0])),
                    std::mem::replace(&mut im.grad, Tensor::zeros(&[0])),
                )?;
                let dspec = complex_mul_bwd(spec, &h, &dfiltered, &mut dh)?;
                re.grad = dh.re;
                im.grad = dh.im;
                rfft_bwd(&dspec, self.config.lookback)?
            }
            FilterParams::Tex { embed_w_re, embed_w_im, embed_b_re, embed_b_im, weights } => {
                let trace = ws.tex.as_ref().expect("tex trace cached");
                let dfiltered = inv_dft_real_bwd(&ds)?;
                // filtered = embed * gate
                let mut dgate = ComplexPair::zeros(trace.gate.shape());
                let mut dembed = complex_mul_bwd(&trace.embed, &trace.gate, &dfiltered, &mut dgate)?;
                // gate = act(pre_act); pre_act = embed * w_eff
                let dpre = split_act_bwd(&trace.pre_act, &dgate, self.config.activation)?;
                let mut dw_eff = ComplexPair::zeros(trace.w_eff.shape());
                let dembed2 = complex_mul_bwd(&trace.embed, &trace.w_eff, &dpre, &mut dw_eff)?;
                dembed.re.add_assign(&dembed2.re)?;
                dembed.im.add_assign(&dembed2.im)?;
                // Distribute the product cotangent to each stacked factor.
                distribute_stack_grads(weights, &dw_eff)?;
                let dspec = complex_affine_bwd(
                    &trace.spec,
                    &embed_w_re.value,
                    &embed_w_im.value,
                    &dembed,
                    &mut embed_w_re.grad,
                    &mut embed_w_im.grad,
                    &mut embed_b_re.grad,
                    &mut embed_b_im.grad,
                )?;
                rfft_bwd(&dspec, self.config.lookback)?
            }
        };

        let dx = if no_norm {
            dz
        } else {
            let state = ws.state.as_ref().expect("state cached");
            instance_norm_bwd(&dz, z, state, &dmean, &dstd)
        };
        Ok(dx)
    }
}

/// Product-rule distribution onto each factor of the stacked weight
/// product: `d w_i = d w_eff * conj(prod_{j != i} w_j)`.
fn distribute_stack_grads(weights: &mut [(Param, Param)], dw_eff: &ComplexPair) -> Result<()> {
    let k = weights.len();
    let values: Vec<ComplexPair> = weights
        .iter()
        .map(|(re, im)| ComplexPair::new(re.value.clone(), im.value.clone()))
        .collect::<Result<_>>()?;
    let shape = values[0].shape().to_vec();
    let unit = {
        let mut re = Tensor::zeros(&shape);
        re.fill(1.0);
        ComplexPair::new(re, Tensor::zeros(&shape))?
    };
    let mut prefix = Vec::with_capacity(k + 1);
    prefix.push(unit.clone());
    for v in &values {
        let last = prefix.last().unwrap();
        prefix.push(complex_mul_fwd(last, v)?);
    }
    let mut suffix = vec![unit; k + 1];
    for i in (0..k).rev() {
        suffix[i] = complex_mul_fwd(&values[i], &suffix[i + 1])?;
    }
    for i in 0..k {
        let others = complex_mul_fwd(&prefix[i], &suffix[i + 1])?;
        let (gre, gim) = (&mut weights[i].0.grad, &mut weights[i].1.grad);
        let (ore, oim) = (others.re.data(), others.im.data());
        let (dre, dim) = (dw_eff.re.data(), dw_eff.im.data());
        for j in 0..dre.len() {
            gre.data_mut()[j] += dre[j] * ore[j] + dim[j] * oim[j];
            gim.data_mut()[j] += -dre[j] * oim[j] + dim[j] * ore[j];
        }
    }
    Ok(())
}

impl FilterNet {
    /// Smallest |input| feeding any relu in the network for this batch.
    /// Central finite differences are only meaningful when this margin
    /// comfortably exceeds the probe step.
    pub fn kink_margin(&self, x: &Tensor) -> Result<f64> {
        let mut ws = Workspace::default();
        self.forward_cached(x, &mut ws)?;
        let mut margin = f64::INFINITY;
        if matches!(self.params.head, HeadParams::Ffn { .. }) {
            if let Some(pre) = &ws.hidden_pre {
                for v in pre.data() {
                    margin = margin.min(v.abs());
                }
            }
        }
        if self.config.activation == Activation::Relu {
            if let Some(trace) = &ws.tex {
                for v in trace.pre_act.re.data().iter().chain(trace.pre_act.im.data()) {
                    margin = margin.min(v.abs());
                }
            }
        }
        Ok(margin)
    }
}

/// Margin below which a relu input invalidates a finite-difference probe.
pub const KINK_MARGIN: f64 = 1e-3;

/// Central differences of an O(1) loss at step 1e-5 resolve gradients down
/// to roughly 1e-11; coordinates with |g| in this band are real enough to
/// register but too small to beat that noise, so batches producing them
/// are rejected. Below the band the probe sees an exactly flat function
/// (the perturbation is under the loss's ulp) and the comparison is safe.
pub const GRAD_NOISE_BAND: (f64, f64) = (1e-13, 1e-7);

/// Draw a random batch/target pair on which a finite-difference check is
/// well posed: every relu input clears [`KINK_MARGIN`] and no parameter
/// gradient lands inside [`GRAD_NOISE_BAND`]. Deterministic given the
/// seed.
pub fn well_conditioned_batch(
    net: &FilterNet,
    batch: usize,
    seed: u64,
) -> Result<(Tensor, Tensor)> {
    let n = net.config.channels;
    let lookback = net.config.lookback;
    let horizon = net.config.horizon;
    for attempt in 0..256u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E3779B97F4A7C15));
        let x = uniform_tensor(&mut rng, &[batch, n, lookback], 1.0);
        let y = uniform_tensor(&mut rng, &[batch, n, horizon], 1.0);
        if net.kink_margin(&x)? <= KINK_MARGIN {
            continue;
        }
        let mut probe = LossModel::new(net.clone(), x.clone(), y.clone());
        probe.loss_and_grad()?;
        let degenerate = probe.params_mut().iter().any(|p| {
            p.grad.data().iter().any(|g| {
                let a = g.abs();
                a > GRAD_NOISE_BAND.0 && a < GRAD_NOISE_BAND.1
            })
        });
        if !degenerate {
            return Ok((x, y));
        }
    }
    Err(Error::Config("no well-conditioned batch found in 256 attempts".into()))
}

// ---------------------------------------------------------------------------
// Loss wrapper for gradient checking and training
// ---------------------------------------------------------------------------

/// A model bound to a fixed batch and target; the scalar objective is the
/// mean squared error of the prediction.
pub struct LossModel {
    pub net: FilterNet,
    pub x: Tensor,
    pub y: Tensor,
}

impl LossModel {
    pub fn new(net: FilterNet, x: Tensor, y: Tensor) -> Self {
        Self { net, x, y }
    }
}

impl DiffModel for LossModel {
    fn loss(&mut self) -> Result<f64> {
        let yhat = self.net.forward(&self.x)?;
        crate::train::mse_loss(&yhat, &self.y)
    }

    fn loss_and_grad(&mut self) -> Result<f64> {
        self.net.params.zero_grads();
        let mut ws = Workspace::default();
        let yhat = self.net.forward_cached(&self.x, &mut ws)?;
        let loss = crate::train::mse_loss(&yhat, &self.y)?;
        let dyhat = crate::train::mse_grad(&yhat, &self.y)?;
        self.net.backward(&dyhat, &ws)?;
        Ok(loss)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params.params_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn rand_tensor(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn instance_norm_hand_example() {
        // Window [1,2,3]: mean 2, population std sqrt(2/3).
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let (z, state) = instance_norm(&x, 1e-5).unwrap();
        let want = 1.224_744_871_391_589_1;
        assert!((z.data()[0] + want).abs() < 1e-12);
        assert!(z.data()[1].abs() < 1e-12);
        assert!((z.data()[2] - want).abs() < 1e-12);
        assert!((state.mean.data()[0] - 2.0).abs() < 1e-15);
        assert!((state.std.data()[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_window_clamps() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![5.0, 5.0, 5.0]).unwrap();
        let (z, state) = instance_norm(&x, 1e-5).unwrap();
        assert_eq!(z.data(), &[0.0, 0.0, 0.0]);
        assert_eq!(state.std.data()[0], 1e-5);
        assert!(state.clamped[0]);
    }

    #[test]
    fn norm_round_trips() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let x = rand_tensor(&mut rng, &[4, 3, 12]);
        let (z, state) = instance_norm(&x, 1e-5).unwrap();
        let back = inverse_norm(&z, &state).unwrap();
        for (a, b) in back.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }

        // Zero prediction maps to the per-channel mean.
        let p = Tensor::zeros(&[4, 3, 5]);
        let out = inverse_norm(&p, &state).unwrap();
        for r in 0..12 {
            for t in 0..5 {
                assert_eq!(out.data()[r * 5 + t], state.mean.data()[r]);
            }
        }
    }

    #[test]
    fn inverse_norm_identity_state() {
        let state = RevInState {
            mean: Tensor::zeros(&[1, 2]),
            std: Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap(),
            clamped: vec![false, false],
        };
        let p = Tensor::from_vec(&[1, 2, 2], vec![0.5, -0.25, 2.0, 4.0]).unwrap();
        assert_eq!(inverse_norm(&p, &state).unwrap(), p);

        let bad = Tensor::zeros(&[2, 2, 2]);
        assert!(inverse_norm(&bad, &state).is_err());
    }

    #[test]
    fn instance_norm_input_gradient_matches_fd() {
        // Full gradient flow through mean and std.
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = rand_tensor(&mut rng, &[1, 2, 6]);
        let loss = |x: &Tensor| {
            let (z, state) = instance_norm(x, 1e-5).unwrap();
            // A loss touching both the normalized values and the stats.
            let p = Tensor::from_vec(
                &[1, 2, 6],
                z.data().iter().map(|v| v * 0.5 + 0.1).collect(),
            )
            .unwrap();
            let y = inverse_norm(&p, &state).unwrap();
            y.data().iter().map(|v| v * v).sum::<f64>()
        };
        let base_loss_grad = {
            let (z, state) = instance_norm(&x, 1e-5).unwrap();
            let p = Tensor::from_vec(
                &[1, 2, 6],
                z.data().iter().map(|v| v * 0.5 + 0.1).collect(),
            )
            .unwrap();
            let y = inverse_norm(&p, &state).unwrap();
            let mut dy = y.clone();
            dy.scale(2.0);
            let (dp, dmean, dstd) = inverse_norm_bwd(&dy, &p, &state);
            let mut dz = dp;
            dz.scale(0.5); // through p = 0.5 z + 0.1
            instance_norm_bwd(&dz, &z, &state, &dmean, &dstd)
        };
        let eps = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let fp = loss(&xp);
            xp.data_mut()[i] = x.data()[i] - eps;
            let fm = loss(&xp);
            let numeric = (fp - fm) / (2.0 * eps);
            let a = base_loss_grad.data()[i];
            assert!(
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8) < 1e-5,
                "coord {i}: {a} vs {numeric}"
            );
        }
    }

    #[test]
    fn pai_identity_and_null_filters() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let z = rand_tensor(&mut rng, &[2, 3, 8]);
        let bins = dsp::half_bins(8);
        let mut ones = Tensor::zeros(&[1, bins]);
        ones.fill(1.0);
        let s = pai_filter_forward(&z, &ones, &Tensor::zeros(&[1, bins])).unwrap();
        for (a, b) in s.data().iter().zip(z.data()) {
            assert!((a - b).abs() < 1e-10);
        }
        let s = pai_filter_forward(&z, &Tensor::zeros(&[1, bins]), &Tensor::zeros(&[1, bins])).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pai_filter_equals_circular_convolution() {
        // The frequency path must match time-domain circular convolution
        // with the filter's impulse response.
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let len = 8;
        let bins = dsp::half_bins(len);
        let z = rand_tensor(&mut rng, &[1, 2, len]);
        // Unconstrained weights: DC/Nyquist imaginary parts are projected
        // away identically on both routes.
        let hre = rand_tensor(&mut rng, &[1, bins]);
        let him = rand_tensor(&mut rng, &[1, bins]);
        let s = pai_filter_forward(&z, &hre, &him).unwrap();

        let spec = dsp::HalfSpectrum::new(
            hre.data()
                .iter()
                .zip(him.data())
                .map(|(&r, &i)| rustfft::num_complex::Complex::new(r, i))
                .collect(),
            len,
        )
        .unwrap();
        let impulse = dsp::irfft(&spec, len).unwrap();
        for ch in 0..2 {
            let zrow = &z.data()[ch * len..(ch + 1) * len];
            let want = dsp::circular_convolve_naive(&impulse, zrow).unwrap();
            let got = &s.data()[ch * len..(ch + 1) * len];
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn tex_with_identity_embedding_squares_spectrum() {
        // Identity embedding, unit stacked weights, identity activation:
        // the filtered spectrum is the elementwise square of the input
        // spectrum.
        let len = 8;
        let bins = dsp::half_bins(len);
        let mut config = ModelConfig::new(len, 4, 1, FilterKind::Tex);
        config.embed_dim = Some(bins);
        config.num_weights = 2;
        config.activation = Activation::Identity;
        let mut params = ModelParams::init(&config, 0).unwrap();
        if let FilterParams::Tex { embed_w_re, embed_w_im, embed_b_re, embed_b_im, weights } =
            &mut params.filter
        {
            embed_w_re.value.fill(0.0);
            for i in 0..bins {
                embed_w_re.value.data_mut()[i * bins + i] = 1.0;
            }
            embed_w_im.value.fill(0.0);
            embed_b_re.value.fill(0.0);
            embed_b_im.value.fill(0.0);
            for (re, im) in weights {
                re.value.fill(1.0);
                im.value.fill(0.0);
            }
        }
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let z = rand_tensor(&mut rng, &[1, 1, len]);
        let (_, trace) = tex_forward(&z, &params.filter, Activation::Identity).unwrap();
        let filtered = complex_mul_fwd(&trace.embed, &trace.gate).unwrap();
        let spec = rfft_fwd(&z).unwrap();
        for i in 0..bins {
            let (zr, zi) = (spec.re.data()[i], spec.im.data()[i]);
            let want_re = zr * zr - zi * zi;
            let want_im = 2.0 * zr * zi;
            assert!((filtered.re.data()[i] - want_re).abs() < 1e-10);
            assert!((filtered.im.data()[i] - want_im).abs() < 1e-10);
        }

        // Zero input with zero bias propagates to zero output.
        let zero = Tensor::zeros(&[1, 1, len]);
        let s = tex_filter_forward(&zero, &params.filter, Activation::Identity).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ffn_identity_and_constant() {
        // Identity network: hidden [I | -I], output [I; -I] recovers the
        // input for any sign.
        let dim = 4;
        let mut w1 = Tensor::zeros(&[dim, 2 * dim]);
        let mut w2 = Tensor::zeros(&[2 * dim, dim]);
        for i in 0..dim {
            w1.data_mut()[i * 2 * dim + i] = 1.0;
            w1.data_mut()[i * 2 * dim + dim + i] = -1.0;
            w2.data_mut()[i * dim + i] = 1.0;
            w2.data_mut()[(dim + i) * dim + i] = -1.0;
        }
        let head = HeadParams::Ffn {
            w1: Param::new("ffn.w1", w1),
            b1: Param::new("ffn.b1", Tensor::zeros(&[2 * dim])),
            w2: Param::new("ffn.w2", w2),
            b2: Param::new("ffn.b2", Tensor::zeros(&[dim])),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let s = rand_tensor(&mut rng, &[2, 3, dim]);
        let p = ffn_forward(&s, &head).unwrap();
        for (a, b) in p.data().iter().zip(s.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // Zero weights and constant output bias.
        let head = HeadParams::Ffn {
            w1: Param::new("ffn.w1", Tensor::zeros(&[dim, 2])),
            b1: Param::new("ffn.b1", Tensor::zeros(&[2])),
            w2: Param::new("ffn.w2", Tensor::zeros(&[2, 3])),
            b2: Param::new("ffn.b2", Tensor::from_vec(&[3], vec![2.5, 2.5, 2.5]).unwrap()),
        };
        let p = ffn_forward(&s, &head).unwrap();
        assert!(p.data().iter().all(|&v| v == 2.5));
    }

    fn loss_model(kind: FilterKind, seed: u64) -> LossModel {
        let mut config = ModelConfig::new(12, 5, 2, kind);
        config.ffn_hidden = 6;
        config.embed_dim = Some(12);
        config.num_weights = 3;
        let net = FilterNet::init(config, seed).unwrap();
        let (x, y) = well_conditioned_batch(&net, 2, seed ^ 0x5eed).unwrap();
        LossModel::new(net, x, y)
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for kind in [FilterKind::PaiUni, FilterKind::PaiInd, FilterKind::Tex] {
            let mut lm = loss_model(kind, 9);
            let report = grad_check(&mut lm, 1e-5).unwrap();
            assert!(
                report.max_rel_err() < 1e-4,
                "{kind:?}: {:?}",
                report.groups
            );
        }
    }

    #[test]
    fn full_model_input_gradient_matches_finite_differences() {
        let mut lm = loss_model(FilterKind::Tex, 10);
        let loss_at = |lm: &mut LossModel, x: &Tensor| {
            lm.x = x.clone();
            lm.loss().unwrap()
        };
        lm.net.params.zero_grads();
        let mut ws = Workspace::default();
        let yhat = lm.net.forward_cached(&lm.x, &mut ws).unwrap();
        let dyhat = crate::train::mse_grad(&yhat, &lm.y).unwrap();
        let dx = lm.net.backward(&dyhat, &ws).unwrap();

        let x0 = lm.x.clone();
        let eps = 1e-5;
        for i in 0..x0.len() {
            let mut xp = x0.clone();
            xp.data_mut()[i] += eps;
            let fp = loss_at(&mut lm, &xp);
            xp.data_mut()[i] = x0.data()[i] - eps;
            let fm = loss_at(&mut lm, &xp);
            let numeric = (fp - fm) / (2.0 * eps);
            let a = dx.data()[i];
            assert!(
                (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8) < 1e-4,
                "coord {i}: {a} vs {numeric}"
            );
        }
    }

    #[test]
    fn identity_pipeline_reproduces_input() {
        // Identity filter + identity head (tau = L) makes the whole model
        // the identity map.
        let len = 6;
        let mut config = ModelConfig::new(len, len, 2, FilterKind::PaiUni);
        config.ffn_hidden = 2 * len;
        let mut net = FilterNet::init(config, 0).unwrap();
        if let FilterParams::Pai { re, im } = &mut net.params.filter {
            re.value.fill(1.0);
            im.value.fill(0.0);
        }
        let mut w1 = Tensor::zeros(&[len, 2 * len]);
        let mut w2 = Tensor::zeros(&[2 * len, len]);
        for i in 0..len {
            w1.data_mut()[i * 2 * len + i] = 1.0;
            w1.data_mut()[i * 2 * len + len + i] = -1.0;
            w2.data_mut()[i * len + i] = 1.0;
            w2.data_mut()[(len + i) * len + i] = -1.0;
        }
        net.params.head = HeadParams::Ffn {
            w1: Param::new("ffn.w1", w1),
            b1: Param::new("ffn.b1", Tensor::zeros(&[2 * len])),
            w2: Param::new("ffn.w2", w2),
            b2: Param::new("ffn.b2", Tensor::zeros(&[len])),
        };
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = rand_tensor(&mut rng, &[3, 2, len]);
        let y = net.forward(&x).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_model_is_affine_equivariant_per_window() {
        // With frozen parameters, scaling and shifting a window scales and
        // shifts the prediction the same way.
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for kind in [FilterKind::PaiUni, FilterKind::Tex] {
            let mut config = ModelConfig::new(10, 4, 2, kind);
            config.ffn_hidden = 8;
            let net = FilterNet::init(config, 21).unwrap();
            let x = rand_tensor(&mut rng, &[2, 2, 10]);
            let base = net.forward(&x).unwrap();
            let a = 2.75;
            let c = -1.3;
            let scaled = Tensor::from_vec(
                x.shape(),
                x.data().iter().map(|v| a * v + c).collect(),
            )
            .unwrap();
            let out = net.forward(&scaled).unwrap();
            for (got, want) in out.data().iter().zip(base.data().iter().map(|v| a * v + c)) {
                assert!((got - want).abs() < 1e-8, "{kind:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for kind in [FilterKind::PaiUni, FilterKind::PaiInd, FilterKind::Tex] {
            let mut config = ModelConfig::new(9, 7, 3, kind);
            config.ffn_hidden = 5;
            let net = FilterNet::init(config, 3).unwrap();
            let x = rand_tensor(&mut rng, &[2, 3, 9]);
            let y1 = net.forward(&x).unwrap();
            let y2 = net.forward(&x).unwrap();
            assert_eq!(y1.shape(), &[2, 3, 7]);
            assert_eq!(y1.data(), y2.data(), "two passes must agree bitwise");
        }
    }

    #[test]
    fn every_parameter_gets_gradient_on_generic_data() {
        for kind in [FilterKind::PaiUni, FilterKind::PaiInd, FilterKind::Tex] {
            let mut lm = loss_model(kind, 17);
            lm.loss_and_grad().unwrap();
            for p in lm.params_mut() {
                let norm: f64 = p.grad.data().iter().map(|v| v * v).sum();
                assert!(norm > 0.0, "{kind:?}: parameter {} has zero gradient", p.name);
            }
        }
    }

    #[test]
    fn ablation_variants_run() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let x = rand_tensor(&mut rng, &[2, 2, 8]);
        for ablation in [Ablation::NoNorm, Ablation::NoFilter, Ablation::NoFfn] {
            let mut config = ModelConfig::new(8, 3, 2, FilterKind::PaiUni);
            config.ffn_hidden = 4;
            config.ablation = ablation;
            let net = FilterNet::init(config, 1).unwrap();
            let y = net.forward(&x).unwrap();
            assert_eq!(y.shape(), &[2, 2, 3]);
        }
    }

    #[test]
    fn ablation_gradients_match_finite_differences() {
        for ablation in [Ablation::NoNorm, Ablation::NoFilter, Ablation::NoFfn] {
            let mut config = ModelConfig::new(8, 3, 2, FilterKind::PaiUni);
            config.ffn_hidden = 4;
            config.ablation = ablation;
            let net = FilterNet::init(config, 2).unwrap();
            let (x, y) = well_conditioned_batch(&net, 2, 15).unwrap();
            let mut lm = LossModel::new(net, x, y);
            let report = grad_check(&mut lm, 1e-5).unwrap();
            assert!(report.max_rel_err() < 1e-4, "{ablation:?}: {:?}", report.groups);
        }
    }

    #[test]
    fn config_validation() {
        let mut config = ModelConfig::new(0, 4, 1, FilterKind::PaiUni);
        assert!(config.validate().is_err());
        config.lookback = 8;
        config.norm_epsilon = 0.0;
        assert!(config.validate().is_err());
        config.norm_epsilon = 1e-5;
        assert!(config.validate().is_ok());

        let wrong = FilterNet::init(ModelConfig::new(8, 4, 2, FilterKind::PaiUni), 0).unwrap();
        let x = Tensor::zeros(&[1, 3, 8]);
        assert!(wrong.forward(&x).is_err());
    }
}
