//! Adam updates with bias correction, plus global-norm gradient clipping.

use crate::nets::ParameterSet;
use crate::tensor::Tensor;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First/second moment estimates aligned with a parameter set's entries.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.dims().to_vec()))
            .collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimError {
    NonFiniteGradient { tensor: String },
    NonFiniteParameter { tensor: String },
    Misaligned { expected: usize, got: usize },
}

impl fmt::Display for OptimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimError::NonFiniteGradient { tensor } => {
                write!(f, "non-finite gradient for {tensor}")
            }
            OptimError::NonFiniteParameter { tensor } => {
                write!(f, "non-finite parameter {tensor} after update")
            }
            OptimError::Misaligned { expected, got } => {
                write!(
                    f,
                    "gradient list length {got} does not match {expected} parameters"
                )
            }
        }
    }
}

impl std::error::Error for OptimError {}

/// Scale `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let sq: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// One bias-corrected Adam step over a whole parameter set.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &[Tensor],
    state: &mut AdamState,
    hp: &AdamHyper,
) -> Result<(), OptimError> {
    if grads.len() != params.len() {
        return Err(OptimError::Misaligned {
            expected: params.len(),
            got: grads.len(),
        });
    }
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient {
                tensor: params.name_at(i).to_string(),
            });
        }
    }
    state.t += 1;
    let t = state.t;
    let bias1 = 1.0 - hp.beta1.powi(t as i32);
    let bias2 = 1.0 - hp.beta2.powi(t as i32);

    for i in 0..grads.len() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let theta = params.tensor_at_mut(i).data_mut();
        for k in 0..g.len() {
            m[k] = hp.beta1 * m[k] + (1.0 - hp.beta1) * g[k];
            v[k] = hp.beta2 * v[k] + (1.0 - hp.beta2) * g[k] * g[k];
            let m_hat = m[k] / bias1;
            let v_hat = v[k] / bias2;
            theta[k] -= hp.lr * m_hat / (v_hat.sqrt() + hp.epsilon);
        }
    }
    for i in 0..params.len() {
        if !params.tensor_at(i).is_finite() {
            return Err(OptimError::NonFiniteParameter {
                tensor: params.name_at(i).to_string(),
            });
        }
    }
    Ok(())
}
