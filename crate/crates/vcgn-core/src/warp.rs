//! Kernel-based diffeomorphic warping of an F0 contour by momenta.
//!
//! The deterministic half of each generator. A Gaussian kernel over
//! pairwise contour-value distances (in Hz, sigma sized to span the F0
//! range) drives a fixed number of position/momenta update steps; zero
//! momenta leave the contour untouched, small momenta give a smooth,
//! order-preserving deformation.
//!
//! [`generate_f0`] is the plain evaluation path and
//! [`generate_f0_with_gradients`] records the identical arithmetic on a
//! [`Tape`] so the backward pass reaches both the momenta and the source
//! contour. The two paths share inner kernels and agree bit-for-bit.

use crate::kernels;
use crate::tape::{Tape, TapeError, ValueId};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Upper sanity bound for speech F0 values, Hz.
pub const F0_MAX_HZ: f64 = 800.0;

/// Fixed-length F0 contour in Hz. Values entering the crate from data
/// files are finite, positive and below [`F0_MAX_HZ`]; warped outputs are
/// only guaranteed finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WarpError {
    LengthMismatch { momenta: usize, contour: usize },
    InvalidValue { index: usize, value: f64 },
    Empty,
    NonFinite { step: usize },
    BadConfig(String),
}

impl fmt::Display for WarpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WarpError::LengthMismatch { momenta, contour } => write!(
                f,
                "momenta length {momenta} does not match contour length {contour}"
            ),
            WarpError::InvalidValue { index, value } => {
                write!(f, "contour value {value} at frame {index} is out of range")
            }
            WarpError::Empty => write!(f, "empty contour"),
            WarpError::NonFinite { step } => {
                write!(f, "non-finite intermediate at warp step {step}")
            }
            WarpError::BadConfig(msg) => write!(f, "invalid warp config: {msg}"),
        }
    }
}

impl std::error::Error for WarpError {}

impl Contour {
    /// Validated construction: finite, strictly positive, below 800 Hz.
    pub fn new(values: Vec<f64>) -> Result<Self, WarpError> {
        if values.is_empty() {
            return Err(WarpError::Empty);
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || v <= 0.0 || v >= F0_MAX_HZ {
                return Err(WarpError::InvalidValue { index: i, value: v });
            }
        }
        Ok(Contour { values })
    }

    /// Construction for generated contours, which may leave the speech
    /// range during training but must stay finite.
    pub fn from_generated(values: Vec<f64>) -> Result<Self, WarpError> {
        if values.is_empty() {
            return Err(WarpError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WarpError::InvalidValue {
                index: i,
                value: values[i],
            });
        }
        Ok(Contour { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Warp momenta, same length as the contour they deform.
#[derive(Debug, Clone, PartialEq)]
pub struct Momenta {
    values: Vec<f64>,
}

impl Momenta {
    pub fn new(values: Vec<f64>) -> Result<Self, WarpError> {
        if values.is_empty() {
            return Err(WarpError::Empty);
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(WarpError::InvalidValue {
                index: i,
                value: values[i],
            });
        }
        Ok(Momenta { values })
    }

    pub fn zeros(len: usize) -> Self {
        Momenta {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Which contour the pairwise distances are rebuilt from at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    /// Distances from the contour as it evolves (geodesic-shooting form).
    Evolving,
    /// Distances from the original source contour at every step.
    Frozen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WarpConfig {
    /// Kernel width in Hz, sized to span the F0 range.
    pub sigma: f64,
    /// Number of update iterations.
    pub steps: usize,
    pub step_size: f64,
    pub distance_source: DistanceSource,
}

impl Default for WarpConfig {
    fn default() -> Self {
        WarpConfig {
            sigma: 50.0,
            steps: 3,
            step_size: 1.0,
            distance_source: DistanceSource::Evolving,
        }
    }
}

impl WarpConfig {
    pub fn validate(&self) -> Result<(), WarpError> {
        if !(self.sigma > 0.0) {
            return Err(WarpError::BadConfig(format!("sigma = {}", self.sigma)));
        }
        if self.steps < 1 {
            return Err(WarpError::BadConfig("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(WarpError::BadConfig(format!(
                "step_size = {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Pairwise distance matrix d[i][j] = v_i - v_j and Gaussian kernel
/// K[i][j] = exp(-d[i][j]^2 / sigma^2) for the given contour state.
pub fn gaussian_kernel(contour_state: &Contour, sigma: f64) -> (Tensor, Tensor) {
    let n = contour_state.len();
    let d = kernels::outer_diff(contour_state.values());
    let c = -1.0 / (sigma * sigma);
    let k: Vec<f64> = d.iter().map(|&dv| (c * (dv * dv)).exp()).collect();
    (Tensor::matrix(n, n, k), Tensor::matrix(n, n, d))
}

fn check_lengths(momenta: &Momenta, source: &Contour) -> Result<usize, WarpError> {
    if momenta.len() != source.len() {
        return Err(WarpError::LengthMismatch {
            momenta: momenta.len(),
            contour: source.len(),
        });
    }
    Ok(source.len())
}

/// Warp `source` by `momenta`: cfg.steps iterations of kernel-driven
/// position and momenta updates. Zero momenta return the source exactly.
pub fn generate_f0(
    momenta: &Momenta,
    source: &Contour,
    cfg: &WarpConfig,
) -> Result<Contour, WarpError> {
    cfg.validate()?;
    let n = check_lengths(momenta, source)?;
    let c_kern = -1.0 / (cfg.sigma * cfg.sigma);
    let c_mom = cfg.step_size * (-2.0 / (cfg.sigma * cfg.sigma));

    let mut p = source.values().to_vec();
    let mut m = momenta.values().to_vec();

    for step in 0..cfg.steps {
        let dist_base: &[f64] = match cfg.distance_source {
            DistanceSource::Evolving => &p,
            DistanceSource::Frozen => source.values(),
        };
        let d = kernels::outer_diff(dist_base);
        let k: Vec<f64> = d.iter().map(|&dv| (c_kern * (dv * dv)).exp()).collect();

        // p_i <- p_i + step_size * sum_l K[i][l] m_l
        let km = kernels::matvec(&k, &m, n, n);
        let p_next: Vec<f64> = (0..n).map(|i| p[i] + cfg.step_size * km[i]).collect();

        // m_i <- m_i + step_size * (-2/sigma^2) * m_i * sum_j K[i][j] d[i][j] m_j
        let w: Vec<f64> = k.iter().zip(d.iter()).map(|(&kv, &dv)| kv * dv).collect();
        let u = kernels::matvec(&w, &m, n, n);
        let m_next: Vec<f64> = (0..n).map(|i| m[i] + c_mom * (m[i] * u[i])).collect();

        if p_next.iter().chain(m_next.iter()).any(|v| !v.is_finite()) {
            return Err(WarpError::NonFinite { step });
        }
        p = p_next;
        m = m_next;
    }
    Contour::from_generated(p)
}

/// Record the warp on `tape` starting from existing values for the
/// momenta and source contour. Returns the id of the warped contour.
///
/// The recorded arithmetic is the exact expression sequence of
/// [`generate_f0`], so the two produce bit-identical values.
pub fn warp_on_tape(
    tape: &mut Tape,
    momenta_id: ValueId,
    source_id: ValueId,
    cfg: &WarpConfig,
) -> Result<ValueId, TapeError> {
    let c_kern = -1.0 / (cfg.sigma * cfg.sigma);
    let c_mom = cfg.step_size * (-2.0 / (cfg.sigma * cfg.sigma));

    let mut p = source_id;
    let mut m = momenta_id;

    for _ in 0..cfg.steps {
        let dist_base = match cfg.distance_source {
            DistanceSource::Evolving => p,
            DistanceSource::Frozen => source_id,
        };
        let d = tape.outer_diff(dist_base)?;
        let d_sq = tape.square(d)?;
        let scaled = tape.scale_const(c_kern, d_sq)?;
        let k = tape.exp(scaled)?;

        let km = tape.matvec(k, m)?;
        let km_scaled = tape.scale_const(cfg.step_size, km)?;
        let p_next = tape.add(p, km_scaled)?;

        let w = tape.mul(k, d)?;
        let u = tape.matvec(w, m)?;
        let mu = tape.mul(m, u)?;
        let mu_scaled = tape.scale_const(c_mom, mu)?;
        let m_next = tape.add(m, mu_scaled)?;

        p = p_next;
        m = m_next;
    }
    Ok(p)
}

/// Leaf ids created by [`generate_f0_with_gradients`].
#[derive(Debug, Clone, Copy)]
pub struct WarpLeaves {
    pub momenta: ValueId,
    pub source: ValueId,
    pub output: ValueId,
}

/// Same values as [`generate_f0`], recorded through tape primitives so
/// backward() yields gradients w.r.t. both momenta and source.
pub fn generate_f0_with_gradients(
    momenta: &Momenta,
    source: &Contour,
    cfg: &WarpConfig,
    tape: &mut Tape,
) -> Result<(Contour, WarpLeaves), WarpError> {
    cfg.validate()?;
    check_lengths(momenta, source)?;
    let m_id = tape.leaf(Tensor::vector(momenta.values().to_vec()));
    let p_id = tape.leaf(Tensor::vector(source.values().to_vec()));
    let out = warp_on_tape(tape, m_id, p_id, cfg).map_err(|e| match e {
        TapeError::NonFinite { step, .. } => WarpError::NonFinite { step },
        other => WarpError::BadConfig(other.to_string()),
    })?;
    let contour = Contour::from_generated(tape.value(out).data().to_vec())?;
    Ok((
        contour,
        WarpLeaves {
            momenta: m_id,
            source: p_id,
            output: out,
        },
    ))
}


/// Construction of bounded-momenta test instances for the
/// order-preservation property, shared by the unit tests, the acceptance
/// suite and the calibration sweep.
pub mod regime {
    use super::{Contour, Momenta, WarpConfig};
    use crate::rng::Rng;

    /// Minimum adjacent-value gap, Hz. Frozen after a sweep over gap and
    /// momenta-budget scalings (see the ignored `sweep_regime_constants`
    /// test in `tests/acceptance.rs`).
    pub const MIN_GAP_HZ: f64 = 5.0;

    /// Random instance of the regime: a reflected random walk with
    /// per-step increments in [gap, 3 gap], and momenta scaled so each
    /// step's maximum displacement stays below gap / (3 * steps).
    pub fn bounded_regime_instance(
        rng: &mut Rng,
        n: usize,
        cfg: &WarpConfig,
    ) -> (Contour, Momenta) {
        instance_with_gap(rng, n, cfg, MIN_GAP_HZ)
    }

    pub fn instance_with_gap(
        rng: &mut Rng,
        n: usize,
        cfg: &WarpConfig,
        gap: f64,
    ) -> (Contour, Momenta) {
        let mut values = Vec::with_capacity(n);
        let mut v = rng.uniform(150.0, 250.0);
        let mut dir = if rng.next_f64() < 0.5 { 1.0 } else { -1.0 };
        values.push(v);
        for _ in 1..n {
            let step = rng.uniform(gap, 3.0 * gap);
            if v + dir * step < 90.0 || v + dir * step > 400.0 {
                dir = -dir;
            }
            v += dir * step;
            if rng.next_f64() < 0.3 {
                dir = -dir;
            }
            values.push(v);
        }
        let p = Contour::new(values).unwrap();
        let raw: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let l1: f64 = raw.iter().map(|x| x.abs()).sum();
        // Per-step displacement of any point is bounded by ||m||_1 (K <= 1).
        let budget = gap / (3.0 * cfg.steps as f64);
        let scale = budget / l1.max(1e-12);
        let m = Momenta::new(raw.iter().map(|x| x * scale).collect()).unwrap();
        (p, m)
    }

    /// Number of (i, j) pairs whose strict value ordering flipped.
    pub fn count_order_violations(before: &[f64], after: &[f64]) -> usize {
        let n = before.len();
        let mut violations = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if before[i] < before[j] && after[i] >= after[j] {
                    violations += 1;
                }
                if before[i] > before[j] && after[i] <= after[j] {
                    violations += 1;
                }
            }
        }
        violations
    }
}
