//! Trainable networks: the momenta generator and the joint-pair
//! discriminator.
//!
//! Both are expressed entirely through tape primitives so one backward
//! sweep reaches every weight. Convolutions along time are built from
//! zero padding (concat), row slices and per-tap matmuls; stride 2 is a
//! constant decimation matrix; the dense head is an elementwise product
//! with a sum reduction. Dropout masks are drawn outside the record so a
//! gradient check can freeze them.

use crate::rng::Rng;
use crate::tape::{Tape, TapeError, ValueId};
use crate::tensor::Tensor;
use crate::warp::{Contour, Momenta};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;

/// Number of spectral coefficients per frame.
pub const MFCC_DIM: usize = 23;

/// F0 values are divided by this before entering a network.
pub const F0_SCALE: f64 = 400.0;

/// T x 23 spectral conditioning features.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMatrix {
    frames: usize,
    data: Vec<f64>,
}

impl SpectralMatrix {
    pub fn new(frames: usize, data: Vec<f64>) -> Result<Self, NetError> {
        if frames == 0 || data.len() != frames * MFCC_DIM {
            return Err(NetError::BadShape {
                what: "spectral matrix",
                expected: vec![frames, MFCC_DIM],
                got: vec![data.len()],
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite {
                what: "spectral matrix",
            });
        }
        Ok(SpectralMatrix { frames, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * MFCC_DIM..(t + 1) * MFCC_DIM]
    }
}

/// Per-coefficient standardization statistics, computed on a train split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfccStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MfccStats {
    /// Identity stats (mean 0, std 1), for tests and synthetic checks.
    pub fn identity() -> Self {
        MfccStats {
            mean: [0.0; MFCC_DIM].to_vec(),
            std: [1.0; MFCC_DIM].to_vec(),
        }
    }

    /// Population mean/std per coefficient over all frames of `matrices`.
    pub fn from_matrices<'a>(matrices: impl Iterator<Item = &'a SpectralMatrix>) -> Self {
        let mut sum = [0.0; MFCC_DIM];
        let mut sum_sq = [0.0; MFCC_DIM];
        let mut count = 0usize;
        for m in matrices {
            for t in 0..m.frames() {
                for (c, &v) in m.row(t).iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
            count += m.frames();
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(mean.iter())
            .map(|(sq, mu)| ((sq / n - mu * mu).max(0.0)).sqrt().max(1e-12))
            .collect();
        MfccStats { mean, std }
    }

    pub fn standardize(&self, spectrum: &SpectralMatrix) -> Tensor {
        let t = spectrum.frames();
        let mut out = vec![0.0; t * MFCC_DIM];
        for r in 0..t {
            for c in 0..MFCC_DIM {
                out[r * MFCC_DIM + c] =
                    (spectrum.data()[r * MFCC_DIM + c] - self.mean[c]) / self.std[c];
            }
        }
        Tensor::matrix(t, MFCC_DIM, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetError {
    MissingParam {
        name: String,
    },
    DuplicateParam {
        name: String,
    },
    BadShape {
        what: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    NonFinite {
        what: &'static str,
    },
    LengthMismatch {
        a: usize,
        b: usize,
    },
    Tape(TapeError),
    BadConfig(String),
}

impl fmt::Display for NetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NetError::MissingParam { name } => write!(f, "missing parameter {name:?}"),
            NetError::DuplicateParam { name } => write!(f, "duplicate parameter {name:?}"),
            NetError::BadShape {
                what,
                expected,
                got,
            } => write!(f, "{what}: expected dims {expected:?}, got {got:?}"),
            NetError::NonFinite { what } => write!(f, "{what} contains non-finite values"),
            NetError::LengthMismatch { a, b } => {
                write!(f, "contour lengths differ: {a} vs {b}")
            }
            NetError::Tape(e) => write!(f, "{e}"),
            NetError::BadConfig(msg) => write!(f, "invalid net config: {msg}"),
        }
    }
}

impl std::error::Error for NetError {}

impl From<TapeError> for NetError {
    fn from(e: TapeError) -> Self {
        NetError::Tape(e)
    }
}

/// Named trainable tensors with deterministic iteration order plus the
/// RNG state used for dropout sampling.
#[derive(Debug, Clone)]
pub struct ParameterSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
    pub rng: Rng,
}

impl ParameterSet {
    pub fn new(rng: Rng) -> Self {
        ParameterSet {
            entries: Vec::new(),
            index: HashMap::new(),
            rng,
        }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), NetError> {
        if self.index.contains_key(name) {
            return Err(NetError::DuplicateParam { name: name.into() });
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn tensor_at(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn tensor_at_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn name_at(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Total scalar count across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub dropout_rate: f64,
    pub conv_channels: Vec<usize>,
    pub kernel_width: usize,
    pub momenta_output_gain_init: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            dropout_rate: 0.2,
            conv_channels: vec![32, 64],
            kernel_width: 5,
            momenta_output_gain_init: 0.1,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NetError::BadConfig(format!(
                "dropout_rate = {}",
                self.dropout_rate
            )));
        }
        if self.kernel_width.is_multiple_of(2) || self.kernel_width == 0 {
            return Err(NetError::BadConfig(format!(
                "kernel_width = {} (must be odd)",
                self.kernel_width
            )));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(NetError::BadConfig(format!(
                "conv_channels = {:?}",
                self.conv_channels
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetKind {
    Generator,
    Discriminator,
}

fn xavier_fill(rng: &mut Rng, dims: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.uniform(-bound, bound)).collect())
}

/// Initialize a parameter set: Xavier-uniform weights with conv-level
/// fans, zero biases, generator output gain from the config. The draw
/// order is the insertion order, so a seed fully determines the result.
pub fn init_params(kind: NetKind, cfg: &NetConfig, seed: u64) -> Result<ParameterSet, NetError> {
    cfg.validate()?;
    let mut rng = Rng::from_seed(seed);
    let dropout_rng = rng.derive(0xd20);
    let mut params = ParameterSet::new(dropout_rng);
    let kw = cfg.kernel_width;

    let conv_layer = |params: &mut ParameterSet,
                      rng: &mut Rng,
                      name: &str,
                      c_in: usize,
                      c_out: usize|
     -> Result<(), NetError> {
        let (fan_in, fan_out) = (c_in * kw, c_out * kw);
        for k in 0..kw {
            params.insert(
                &format!("{name}.w{k}"),
                xavier_fill(rng, vec![c_in, c_out], fan_in, fan_out),
            )?;
        }
        params.insert(&format!("{name}.b"), Tensor::zeros(vec![1, c_out]))?;
        Ok(())
    };

    match kind {
        NetKind::Generator => {
            let mut c_in = 1 + MFCC_DIM;
            for (li, &c_out) in cfg.conv_channels.iter().enumerate() {
                conv_layer(
                    &mut params,
                    &mut rng,
                    &format!("conv{}", li + 1),
                    c_in,
                    c_out,
                )?;
                c_in = c_out;
            }
            // Output head: one channel, rank-1 taps.
            let (fan_in, fan_out) = (c_in * kw, kw);
            for k in 0..kw {
                params.insert(
                    &format!("out.w{k}"),
                    xavier_fill(&mut rng, vec![c_in], fan_in, fan_out),
                )?;
            }
            params.insert("out.b", Tensor::zeros(vec![1]))?;
            params.insert("gain", Tensor::scalar(cfg.momenta_output_gain_init))?;
        }
        NetKind::Discriminator => {
            let mut c_in = 2;
            for (li, &c_out) in cfg.conv_channels.iter().enumerate() {
                conv_layer(
                    &mut params,
                    &mut rng,
                    &format!("conv{}", li + 1),
                    c_in,
                    c_out,
                )?;
                c_in = c_out;
            }
            params.insert("dense.w", xavier_fill(&mut rng, vec![1, c_in], c_in, 1))?;
            params.insert("dense.b", Tensor::zeros(vec![1]))?;
        }
    }
    Ok(params)
}

/// A parameter set registered as tape leaves, preserving entry order.
pub struct BoundParams<'a> {
    set: &'a ParameterSet,
    ids: Vec<ValueId>,
}

impl<'a> BoundParams<'a> {
    pub fn bind(tape: &mut Tape, set: &'a ParameterSet) -> Self {
        let ids = set.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
        BoundParams { set, ids }
    }

    pub fn id(&self, name: &str) -> Result<ValueId, NetError> {
        self.set
            .index
            .get(name)
            .map(|&i| self.ids[i])
            .ok_or_else(|| NetError::MissingParam { name: name.into() })
    }

    pub fn ids(&self) -> &[ValueId] {
        &self.ids
    }

    pub fn set(&self) -> &ParameterSet {
        self.set
    }
}

/// Dropout masks for the generator's hidden layers, drawn outside the
/// record. Entries are 0 or 1/(1 - rate) (inverted dropout).
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    pub masks: Vec<Tensor>,
}

pub fn draw_generator_masks(rng: &mut Rng, cfg: &NetConfig, frames: usize) -> DropoutMasks {
    let keep = 1.0 - cfg.dropout_rate;
    let masks = cfg
        .conv_channels
        .iter()
        .map(|&c| {
            let data: Vec<f64> = (0..frames * c)
                .map(|_| {
                    if rng.next_f64() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            Tensor::matrix(frames, c, data)
        })
        .collect();
    DropoutMasks { masks }
}

/// Same-padded width-`kw` convolution along time via pad + slice + matmul.
/// `x` is [T, c_in]; taps are [c_in, c_out]; bias is [1, c_out].
fn conv1d_same(
    tape: &mut Tape,
    x: ValueId,
    taps: &[ValueId],
    bias: ValueId,
    ones_col: ValueId,
) -> Result<ValueId, TapeError> {
    let frames = tape.value(x).rows();
    let c_in = tape.value(x).cols();
    let kw = taps.len();
    let pad = kw / 2;
    let padded = if pad > 0 {
        let zeros = tape.leaf(Tensor::zeros(vec![pad, c_in]));
        tape.concat(0, &[zeros, x, zeros])?
    } else {
        x
    };
    let mut acc = {
        let s = tape.slice(padded, 0, frames)?;
        tape.matmul(s, taps[0])?
    };
    for (k, &tap) in taps.iter().enumerate().skip(1) {
        let s = tape.slice(padded, k, frames)?;
        let term = tape.matmul(s, tap)?;
        acc = tape.add(acc, term)?;
    }
    let bias_rows = tape.matmul(ones_col, bias)?;
    tape.add(acc, bias_rows)
}

/// Width-`kw` convolution to a single channel: taps are rank-1 [c_in],
/// bias is [1]. Returns a rank-1 [T] value.
fn conv1d_to_vector(
    tape: &mut Tape,
    x: ValueId,
    taps: &[ValueId],
    bias: ValueId,
    ones_col: ValueId,
) -> Result<ValueId, TapeError> {
    let frames = tape.value(x).rows();
    let c_in = tape.value(x).cols();
    let kw = taps.len();
    let pad = kw / 2;
    let padded = if pad > 0 {
        let zeros = tape.leaf(Tensor::zeros(vec![pad, c_in]));
        tape.concat(0, &[zeros, x, zeros])?
    } else {
        x
    };
    let mut acc = {
        let s = tape.slice(padded, 0, frames)?;
        tape.matvec(s, taps[0])?
    };
    for (k, &tap) in taps.iter().enumerate().skip(1) {
        let s = tape.slice(padded, k, frames)?;
        let term = tape.matvec(s, tap)?;
        acc = tape.add(acc, term)?;
    }
    let bias_rows = tape.matvec(ones_col, bias)?;
    tape.add(acc, bias_rows)
}

fn tap_ids(bound: &BoundParams, layer: &str, kw: usize) -> Result<Vec<ValueId>, NetError> {
    (0..kw)
        .map(|k| bound.id(&format!("{layer}.w{k}")))
        .collect()
}

/// Generator forward on an existing tape: standardized spectrum and F0
/// (as tape values) to momenta. `masks` is Some whenever sampling is on.
pub fn generator_momenta_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &NetConfig,
    spectrum_std: ValueId,
    f0: ValueId,
    masks: Option<&DropoutMasks>,
) -> Result<ValueId, NetError> {
    let frames = tape.value(f0).numel();
    let kw = cfg.kernel_width;
    let ones_col = tape.leaf(Tensor::matrix(frames, 1, vec![1.0; frames]));

    let f0_norm = tape.scale_const(1.0 / F0_SCALE, f0)?;
    let mut h = tape.concat(1, &[f0_norm, spectrum_std])?;

    for (li, _) in cfg.conv_channels.iter().enumerate() {
        let layer = format!("conv{}", li + 1);
        let taps = tap_ids(bound, &layer, kw)?;
        let bias = bound.id(&format!("{layer}.b"))?;
        let z = conv1d_same(tape, h, &taps, bias, ones_col)?;
        h = tape.tanh(z)?;
        if let Some(m) = masks {
            let mask_leaf = tape.leaf(m.masks[li].clone());
            h = tape.dropout_apply(h, mask_leaf)?;
        }
    }

    let taps = tap_ids(bound, "out", kw)?;
    let bias = bound.id("out.b")?;
    let raw = conv1d_to_vector(tape, h, &taps, bias, ones_col)?;
    let gain = bound.id("gain")?;
    Ok(tape.scalar_mul(gain, raw)?)
}

/// Momenta for a (spectrum, f0) pair: draws masks from the parameter
/// set's RNG when sampling, standardizes the spectrum, registers leaves
/// and runs the forward. Returns the momenta and the id of the momenta
/// value on the tape.
pub fn generator_momenta(
    spectrum: &SpectralMatrix,
    f0: &Contour,
    params: &mut ParameterSet,
    cfg: &NetConfig,
    stats: &MfccStats,
    sampling: bool,
    tape: &mut Tape,
) -> Result<(Momenta, ValueId), NetError> {
    if spectrum.frames() != f0.len() {
        return Err(NetError::LengthMismatch {
            a: spectrum.frames(),
            b: f0.len(),
        });
    }
    let masks = if sampling {
        Some(draw_generator_masks(&mut params.rng, cfg, f0.len()))
    } else {
        None
    };
    let bound = BoundParams::bind(tape, params);
    let spec_id = tape.leaf(stats.standardize(spectrum));
    let f0_id = tape.leaf(Tensor::vector(f0.values().to_vec()));
    let out = generator_momenta_on_tape(tape, &bound, cfg, spec_id, f0_id, masks.as_ref())?;
    let momenta = Momenta::new(tape.value(out).data().to_vec())
        .map_err(|_| NetError::NonFinite { what: "momenta" })?;
    Ok((momenta, out))
}

/// Constant decimation matrix taking every other row: [ceil(t/2), t].
fn decimation_leaf(tape: &mut Tape, frames: usize) -> ValueId {
    let out_rows = frames.div_ceil(2);
    let mut data = vec![0.0; out_rows * frames];
    for i in 0..out_rows {
        data[i * frames + 2 * i] = 1.0;
    }
    tape.leaf(Tensor::matrix(out_rows, frames, data))
}

/// Discriminator forward up to the pre-sigmoid logit, [1]-shaped.
///
/// Exposed separately so training losses can form log(sigmoid(z)) and
/// log(sigmoid(-z)) from the same logit.
pub fn discriminator_logit_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &NetConfig,
    p_a: ValueId,
    p_b: ValueId,
) -> Result<ValueId, NetError> {
    let kw = cfg.kernel_width;
    let a_n = tape.scale_const(1.0 / F0_SCALE, p_a)?;
    let b_n = tape.scale_const(1.0 / F0_SCALE, p_b)?;
    let mut h = tape.concat(1, &[a_n, b_n])?;

    for (li, _) in cfg.conv_channels.iter().enumerate() {
        let frames = tape.value(h).rows();
        let ones_col = tape.leaf(Tensor::matrix(frames, 1, vec![1.0; frames]));
        let layer = format!("conv{}", li + 1);
        let taps = tap_ids(bound, &layer, kw)?;
        let bias = bound.id(&format!("{layer}.b"))?;
        let z = conv1d_same(tape, h, &taps, bias, ones_col)?;
        let act = tape.relu(z)?;
        let dec = decimation_leaf(tape, frames);
        h = tape.matmul(dec, act)?;
    }

    // Mean over time, then a dense head.
    let rows = tape.value(h).rows();
    let ones_row = tape.leaf(Tensor::matrix(1, rows, vec![1.0; rows]));
    let pooled_sum = tape.matmul(ones_row, h)?;
    let pooled = tape.scale_const(1.0 / rows as f64, pooled_sum)?;
    let dense_w = bound.id("dense.w")?;
    let dense_b = bound.id("dense.b")?;
    let prod = tape.mul(pooled, dense_w)?;
    let z = tape.sum(prod)?;
    Ok(tape.add(z, dense_b)?)
}

/// Discriminator forward on an existing tape: contour pair (as tape
/// values, each rank-1 [T]) to a probability in (0,1).
pub fn discriminator_score_on_tape(
    tape: &mut Tape,
    bound: &BoundParams,
    cfg: &NetConfig,
    p_a: ValueId,
    p_b: ValueId,
) -> Result<ValueId, NetError> {
    let logit = discriminator_logit_on_tape(tape, bound, cfg, p_a, p_b)?;
    Ok(tape.sigmoid(logit)?)
}

/// Probability that (p_a, p_b) is a forward-conversion pair.
pub fn discriminator_score(
    p_a: &Contour,
    p_b: &Contour,
    params: &ParameterSet,
    cfg: &NetConfig,
    tape: &mut Tape,
) -> Result<(f64, ValueId), NetError> {
    if p_a.len() != p_b.len() {
        return Err(NetError::LengthMismatch {
            a: p_a.len(),
            b: p_b.len(),
        });
    }
    let bound = BoundParams::bind(tape, params);
    let a_id = tape.leaf(Tensor::vector(p_a.values().to_vec()));
    let b_id = tape.leaf(Tensor::vector(p_b.values().to_vec()));
    let s = discriminator_score_on_tape(tape, &bound, cfg, a_id, b_id)?;
    Ok((tape.value(s).item(), s))
}

// ---------------------------------------------------------------------
// Plain forward paths.
//
// Value-only evaluation without recording, used by finite-difference
// checks and batch conversion. These follow the tape versions' exact
// expression order and call the same kernels, so values agree bit for
// bit (asserted in tests).

fn get_param<'a>(params: &'a ParameterSet, name: &str) -> Result<&'a Tensor, NetError> {
    params.get(name).ok_or_else(|| NetError::MissingParam {
        name: name.to_string(),
    })
}

fn pad_rows(x: &[f64], frames: usize, cols: usize, pad: usize) -> Vec<f64> {
    let mut out = vec![0.0; (frames + 2 * pad) * cols];
    out[pad * cols..(pad + frames) * cols].copy_from_slice(x);
    out
}

fn conv1d_same_plain(
    x: &[f64],
    frames: usize,
    c_in: usize,
    params: &ParameterSet,
    layer: &str,
    kw: usize,
) -> Result<(Vec<f64>, usize), NetError> {
    let pad = kw / 2;
    let padded = pad_rows(x, frames, c_in, pad);
    let bias = get_param(params, &format!("{layer}.b"))?;
    let c_out = bias.numel();
    let mut acc = vec![0.0; frames * c_out];
    for k in 0..kw {
        let w = get_param(params, &format!("{layer}.w{k}"))?;
        let window = &padded[k * c_in..(k + frames) * c_in];
        let term = crate::kernels::matmul(window, w.data(), frames, c_in, c_out);
        if k == 0 {
            acc = term;
        } else {
            for (a, t) in acc.iter_mut().zip(term.iter()) {
                *a += t;
            }
        }
    }
    for r in 0..frames {
        for c in 0..c_out {
            acc[r * c_out + c] += bias.data()[c];
        }
    }
    Ok((acc, c_out))
}

/// Plain generator forward; bit-identical to the tape path.
pub fn generator_momenta_plain(
    params: &ParameterSet,
    cfg: &NetConfig,
    spectrum_std: &Tensor,
    f0: &[f64],
    masks: Option<&DropoutMasks>,
) -> Result<Vec<f64>, NetError> {
    let frames = f0.len();
    let kw = cfg.kernel_width;

    let mut h = vec![0.0; frames * (1 + MFCC_DIM)];
    for r in 0..frames {
        h[r * (1 + MFCC_DIM)] = (1.0 / F0_SCALE) * f0[r];
        for c in 0..MFCC_DIM {
            h[r * (1 + MFCC_DIM) + 1 + c] = spectrum_std.data()[r * MFCC_DIM + c];
        }
    }
    let mut c_in = 1 + MFCC_DIM;

    for (li, _) in cfg.conv_channels.iter().enumerate() {
        let layer = format!("conv{}", li + 1);
        let (mut z, c_out) = conv1d_same_plain(&h, frames, c_in, params, &layer, kw)?;
        for v in z.iter_mut() {
            *v = v.tanh();
        }
        if let Some(m) = masks {
            for (v, mk) in z.iter_mut().zip(m.masks[li].data().iter()) {
                *v *= mk;
            }
        }
        h = z;
        c_in = c_out;
    }

    // Output head: rank-1 taps to a single channel.
    let pad = kw / 2;
    let padded = pad_rows(&h, frames, c_in, pad);
    let mut acc = vec![0.0; frames];
    for k in 0..kw {
        let w = get_param(params, &format!("out.w{k}"))?;
        let window = &padded[k * c_in..(k + frames) * c_in];
        let term = crate::kernels::matvec(window, w.data(), frames, c_in);
        if k == 0 {
            acc = term;
        } else {
            for (a, t) in acc.iter_mut().zip(term.iter()) {
                *a += t;
            }
        }
    }
    let bias = get_param(params, "out.b")?.data()[0];
    let gain = get_param(params, "gain")?.data()[0];
    for v in acc.iter_mut() {
        *v += bias;
        *v *= gain;
    }
    Ok(acc)
}

/// Plain discriminator forward to the pre-sigmoid logit; bit-identical
/// to the tape path.
pub fn discriminator_logit_plain(
    params: &ParameterSet,
    cfg: &NetConfig,
    p_a: &[f64],
    p_b: &[f64],
) -> Result<f64, NetError> {
    if p_a.len() != p_b.len() {
        return Err(NetError::LengthMismatch {
            a: p_a.len(),
            b: p_b.len(),
        });
    }
    let kw = cfg.kernel_width;
    let mut frames = p_a.len();
    let mut h = vec![0.0; frames * 2];
    for r in 0..frames {
        h[r * 2] = (1.0 / F0_SCALE) * p_a[r];
        h[r * 2 + 1] = (1.0 / F0_SCALE) * p_b[r];
    }
    let mut c_in = 2;

    for (li, _) in cfg.conv_channels.iter().enumerate() {
        let layer = format!("conv{}", li + 1);
        let (mut z, c_out) = conv1d_same_plain(&h, frames, c_in, params, &layer, kw)?;
        for v in z.iter_mut() {
            *v = if *v > 0.0 { *v } else { 0.0 };
        }
        // Stride 2: keep even rows.
        let out_rows = frames.div_ceil(2);
        let mut dec = vec![0.0; out_rows * c_out];
        for i in 0..out_rows {
            dec[i * c_out..(i + 1) * c_out].copy_from_slice(&z[2 * i * c_out..(2 * i + 1) * c_out]);
        }
        h = dec;
        frames = out_rows;
        c_in = c_out;
    }

    let mut pooled = vec![0.0; c_in];
    for c in 0..c_in {
        let mut acc = 0.0;
        for r in 0..frames {
            acc += h[r * c_in + c];
        }
        pooled[c] = acc;
    }
    let inv = 1.0 / frames as f64;
    for v in pooled.iter_mut() {
        *v *= inv;
    }
    let dense_w = get_param(params, "dense.w")?;
    let dense_b = get_param(params, "dense.b")?.data()[0];
    let mut z = 0.0;
    for c in 0..c_in {
        z += pooled[c] * dense_w.data()[c];
    }
    Ok(z + dense_b)
}

pub fn sigmoid_scalar(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
