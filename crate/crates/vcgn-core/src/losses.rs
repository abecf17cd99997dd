//! Scalar training objectives and their tape-side builders.
//!
//! Expectations are realized as means: over frames for the per-frame
//! norms, over the mini-batch (size 1) for the adversarial terms. The
//! plain functions and the tape builders share the same expression
//! order, so values agree bit-for-bit.

use crate::tape::{Tape, TapeError, ValueId};
use crate::tensor::Tensor;
use crate::warp::{Contour, Momenta};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_m: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_c: 1e-3,
            lambda_m: 1e-5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        if self.lambda_c < 0.0 || self.lambda_m < 0.0 {
            return Err(LossError::BadWeights(format!(
                "lambda_c = {}, lambda_m = {} (both must be >= 0)",
                self.lambda_c, self.lambda_m
            )));
        }
        if self.lambda_c + self.lambda_m >= 1.0 {
            return Err(LossError::BadWeights(format!(
                "lambda_c + lambda_m = {} (must be < 1)",
                self.lambda_c + self.lambda_m
            )));
        }
        Ok(())
    }

    pub fn adversarial_weight(&self) -> f64 {
        1.0 - self.lambda_c - self.lambda_m
    }
}

/// Components of one generator objective and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cycle: f64,
    pub momenta_smoothness: f64,
    pub adversarial: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    LengthMismatch { a: usize, b: usize },
    TooShort { len: usize },
    ScoreOutOfRange { score: f64 },
    EmptyScores,
    NonFinite { component: &'static str },
    BadWeights(String),
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::LengthMismatch { a, b } => write!(f, "contour lengths differ: {a} vs {b}"),
            LossError::TooShort { len } => {
                write!(f, "momenta length {len} too short for first differences")
            }
            LossError::ScoreOutOfRange { score } => {
                write!(f, "discriminator score {score} outside (0, 1)")
            }
            LossError::EmptyScores => write!(f, "empty score list"),
            LossError::NonFinite { component } => write!(f, "non-finite {component} component"),
            LossError::BadWeights(msg) => write!(f, "invalid loss weights: {msg}"),
        }
    }
}

impl std::error::Error for LossError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Source-to-target pairs (real source, generated target).
    Forward,
    /// Target-to-source pairs (generated source, real target).
    Backward,
}

/// Mean absolute reconstruction error in Hz.
pub fn cycle_loss(original: &Contour, reconstructed: &Contour) -> Result<f64, LossError> {
    if original.len() != reconstructed.len() {
        return Err(LossError::LengthMismatch {
            a: original.len(),
            b: reconstructed.len(),
        });
    }
    let mut acc = 0.0;
    for (a, b) in original.values().iter().zip(reconstructed.values().iter()) {
        acc += (a - b).abs();
    }
    Ok(acc / original.len() as f64)
}

/// Mean squared first difference of the momenta.
pub fn momenta_smoothness(m: &Momenta) -> Result<f64, LossError> {
    if m.len() < 2 {
        return Err(LossError::TooShort { len: m.len() });
    }
    let v = m.values();
    let mut acc = 0.0;
    for i in 0..v.len() - 1 {
        let d = v[i + 1] - v[i];
        acc += d * d;
    }
    Ok(acc / (v.len() - 1) as f64)
}

fn check_scores(scores: &[f64]) -> Result<(), LossError> {
    if scores.is_empty() {
        return Err(LossError::EmptyScores);
    }
    for &s in scores {
        if !(s > 0.0 && s < 1.0) {
            return Err(LossError::ScoreOutOfRange { score: s });
        }
    }
    Ok(())
}

/// Adversarial bound for a generator: mean log score on forward pairs,
/// mean log(1 - score) on backward pairs.
pub fn generator_adversarial(scores: &[f64], direction: Direction) -> Result<f64, LossError> {
    check_scores(scores)?;
    let sum: f64 = match direction {
        Direction::Forward => scores.iter().map(|s| s.ln()).sum(),
        Direction::Backward => scores.iter().map(|s| (1.0 - s).ln()).sum(),
    };
    Ok(sum / scores.len() as f64)
}

/// Weighted generator objective from its components.
pub fn generator_total(
    cycle: f64,
    momenta_smoothness: f64,
    adversarial: f64,
    weights: &LossWeights,
) -> Result<LossBreakdown, LossError> {
    weights.validate()?;
    for (v, component) in [
        (cycle, "cycle"),
        (momenta_smoothness, "momenta_smoothness"),
        (adversarial, "adversarial"),
    ] {
        if !v.is_finite() {
            return Err(LossError::NonFinite { component });
        }
    }
    let total = (weights.lambda_c * cycle + weights.lambda_m * momenta_smoothness)
        + weights.adversarial_weight() * adversarial;
    Ok(LossBreakdown {
        cycle,
        momenta_smoothness,
        adversarial,
        total,
    })
}

/// Discriminator objective: -mean(log s) on forward pairs
/// -mean(log(1 - s)) on backward pairs.
pub fn discriminator_loss(
    scores_on_forward_pairs: &[f64],
    scores_on_backward_pairs: &[f64],
) -> Result<f64, LossError> {
    check_scores(scores_on_forward_pairs)?;
    check_scores(scores_on_backward_pairs)?;
    let fwd: f64 = scores_on_forward_pairs.iter().map(|s| s.ln()).sum::<f64>()
        / scores_on_forward_pairs.len() as f64;
    let bwd: f64 = scores_on_backward_pairs
        .iter()
        .map(|s| (1.0 - s).ln())
        .sum::<f64>()
        / scores_on_backward_pairs.len() as f64;
    Ok(-fwd - bwd)
}

// Tape-side builders. Each produces a [1]-shaped value.

/// mean(|a - b|) on the tape.
pub fn cycle_term(tape: &mut Tape, a: ValueId, b: ValueId) -> Result<ValueId, TapeError> {
    let diff = tape.sub(a, b)?;
    let ab = tape.abs(diff)?;
    tape.mean(ab)
}

/// mean((m[i+1] - m[i])^2) on the tape; a zero constant for length 1,
/// where no first difference exists.
pub fn smoothness_term(tape: &mut Tape, m: ValueId) -> Result<ValueId, TapeError> {
    let n = tape.value(m).numel();
    if n < 2 {
        return Ok(tape.leaf(Tensor::scalar(0.0)));
    }
    let hi = tape.slice(m, 1, n - 1)?;
    let lo = tape.slice(m, 0, n - 1)?;
    let d = tape.sub(hi, lo)?;
    let sq = tape.square(d)?;
    tape.mean(sq)
}

/// log(score) on the tape.
pub fn adversarial_forward_term(tape: &mut Tape, score: ValueId) -> Result<ValueId, TapeError> {
    tape.log(score)
}

/// log(1 - score) on the tape.
pub fn adversarial_backward_term(tape: &mut Tape, score: ValueId) -> Result<ValueId, TapeError> {
    let one = tape.leaf(Tensor::scalar(1.0));
    let one_minus = tape.sub(one, score)?;
    tape.log(one_minus)
}

/// Weighted generator objective on the tape, mirroring [`generator_total`].
pub fn generator_total_term(
    tape: &mut Tape,
    cycle: ValueId,
    smooth: ValueId,
    adversarial: ValueId,
    weights: &LossWeights,
) -> Result<ValueId, TapeError> {
    let c = tape.scale_const(weights.lambda_c, cycle)?;
    let m = tape.scale_const(weights.lambda_m, smooth)?;
    let cm = tape.add(c, m)?;
    let a = tape.scale_const(weights.adversarial_weight(), adversarial)?;
    tape.add(cm, a)
}

/// Discriminator objective on the tape for one (forward, backward) pair.
pub fn discriminator_loss_term(
    tape: &mut Tape,
    score_forward: ValueId,
    score_backward: ValueId,
) -> Result<ValueId, TapeError> {
    let lf = tape.log(score_forward)?;
    let one = tape.leaf(Tensor::scalar(1.0));
    let omb = tape.sub(one, score_backward)?;
    let lb = tape.log(omb)?;
    let sum = tape.add(lf, lb)?;
    tape.scale_const(-1.0, sum)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(values: &[f64]) -> Contour {
        Contour::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cycle_loss_examples() {
        assert_eq!(
            cycle_loss(&c(&[100.0, 100.0]), &c(&[100.0, 100.0])).unwrap(),
            0.0
        );
        assert_eq!(
            cycle_loss(&c(&[100.0, 100.0]), &c(&[90.0, 110.0])).unwrap(),
            10.0
        );
        assert_eq!(cycle_loss(&c(&[100.0]), &c(&[103.0])).unwrap(), 3.0);
        assert!(matches!(
            cycle_loss(&c(&[100.0]), &c(&[100.0, 100.0])),
            Err(LossError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn smoothness_examples() {
        let m = |v: &[f64]| Momenta::new(v.to_vec()).unwrap();
        assert_eq!(momenta_smoothness(&m(&[1.0, 1.0, 1.0])).unwrap(), 0.0);
        assert_eq!(momenta_smoothness(&m(&[0.0, 1.0, 3.0])).unwrap(), 2.5);
        assert_eq!(momenta_smoothness(&m(&[0.0, 0.0])).unwrap(), 0.0);
        assert!(matches!(
            momenta_smoothness(&m(&[1.0])),
            Err(LossError::TooShort { len: 1 })
        ));
    }

    #[test]
    fn adversarial_examples() {
        let half = generator_adversarial(&[0.5], Direction::Forward).unwrap();
        assert!((half - 0.5f64.ln()).abs() < 1e-12);
        let half_b = generator_adversarial(&[0.5], Direction::Backward).unwrap();
        assert!((half_b - 0.5f64.ln()).abs() < 1e-12);
        let nines = generator_adversarial(&[0.9, 0.9], Direction::Forward).unwrap();
        assert!((nines - 0.9f64.ln()).abs() < 1e-12);
        assert!(matches!(
            generator_adversarial(&[1.0], Direction::Forward),
            Err(LossError::ScoreOutOfRange { .. })
        ));
        assert!(matches!(
            generator_adversarial(&[], Direction::Forward),
            Err(LossError::EmptyScores)
        ));
    }

    #[test]
    fn generator_total_weighted_sum_example() {
        // cycle 2.0, smoothness 0.5, adversarial -0.3 with default weights.
        let b = generator_total(2.0, 0.5, -0.3, &LossWeights::default()).unwrap();
        assert!((b.total - (-0.297692)).abs() < 1e-9, "total {}", b.total);
        let zero = generator_total(0.0, 0.0, 0.0, &LossWeights::default()).unwrap();
        assert_eq!(zero.total, 0.0);
        let c_only = generator_total(1.0, 0.0, 0.0, &LossWeights::default()).unwrap();
        assert!((c_only.total - 0.001).abs() < 1e-15);
    }

    #[test]
    fn breakdown_total_recomputes_exactly() {
        let w = LossWeights::default();
        let b = generator_total(3.7, 0.21, -1.9, &w).unwrap();
        let recomputed = (w.lambda_c * b.cycle + w.lambda_m * b.momenta_smoothness)
            + w.adversarial_weight() * b.adversarial;
        assert!((b.total - recomputed).abs() <= 1e-12);
    }

    #[test]
    fn discriminator_loss_examples() {
        let both_half = discriminator_loss(&[0.5], &[0.5]).unwrap();
        assert!((both_half - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        let sharp = discriminator_loss(&[1.0 - 1e-9], &[1e-9]).unwrap();
        assert!(sharp > 0.0 && sharp < 1e-8, "sharp {sharp}");
        let mild = discriminator_loss(&[0.9], &[0.1]).unwrap();
        assert!((mild - (-(0.9f64.ln()) - 0.9f64.ln())).abs() < 1e-12);
        assert!((mild - 0.210721).abs() < 1e-6);
    }

    #[test]
    fn constant_discriminator_is_optimal_at_half() {
        // Brute-force sweep over constant scores: when forward and backward
        // pair distributions coincide, the loss -log(s) - log(1-s) is
        // minimized at s = 0.5 with value 2 log 2.
        let loss_at = |s: f64| discriminator_loss(&[s], &[s]).unwrap();
        let best = loss_at(0.5);
        assert!((best - 2.0 * 2.0f64.ln()).abs() < 1e-12);
        let mut s: f64 = 0.01;
        while s < 1.0 {
            if (s - 0.5).abs() > 1e-9 {
                assert!(loss_at(s) > best, "constant {s} beat 0.5");
            }
            s += 0.01;
        }
    }

    #[test]
    fn weight_invariants() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            lambda_c: 0.999,
            lambda_m: 0.001
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            lambda_c: -0.1,
            lambda_m: 0.0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn tape_terms_match_plain_values() {
        let orig = c(&[120.0, 130.0, 118.0, 150.0]);
        let rec = c(&[121.5, 128.0, 119.0, 149.0]);
        let m = Momenta::new(vec![0.3, -0.2, 0.9, 0.4]).unwrap();
        let w = LossWeights::default();

        let plain_cycle = cycle_loss(&orig, &rec).unwrap();
        let plain_smooth = momenta_smoothness(&m).unwrap();
        let score = 0.42;
        let plain_adv = generator_adversarial(&[score], Direction::Forward).unwrap();
        let plain = generator_total(plain_cycle, plain_smooth, plain_adv, &w).unwrap();

        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::vector(orig.values().to_vec()));
        let b = tape.leaf(Tensor::vector(rec.values().to_vec()));
        let mid = tape.leaf(Tensor::vector(m.values().to_vec()));
        let s = tape.leaf(Tensor::scalar(score));
        let cy = cycle_term(&mut tape, a, b).unwrap();
        let sm = smoothness_term(&mut tape, mid).unwrap();
        let adv = adversarial_forward_term(&mut tape, s).unwrap();
        let total = generator_total_term(&mut tape, cy, sm, adv, &w).unwrap();

        assert_eq!(tape.value(cy).item(), plain.cycle);
        assert_eq!(tape.value(sm).item(), plain.momenta_smoothness);
        assert_eq!(tape.value(adv).item(), plain.adversarial);
        assert_eq!(tape.value(total).item(), plain.total);

        // Discriminator term too.
        let sf = tape.leaf(Tensor::scalar(0.7));
        let sb = tape.leaf(Tensor::scalar(0.2));
        let dl = discriminator_loss_term(&mut tape, sf, sb).unwrap();
        assert_eq!(
            tape.value(dl).item(),
            discriminator_loss(&[0.7], &[0.2]).unwrap()
        );
    }

    #[test]
    fn lambda_zeroing_isolates_adversarial_pathway() {
        // With lambda_c = lambda_m = 0 the gradient through the total must
        // equal the adversarial gradient alone; the cycle and smoothness
        // pathways carry nothing.
        let w_zero = LossWeights {
            lambda_c: 0.0,
            lambda_m: 0.0,
        };
        let w_default = LossWeights::default();

        let build = |w: &LossWeights| -> (Tape, ValueId, ValueId, ValueId, ValueId) {
            let mut tape = Tape::new();
            let a = tape.leaf(Tensor::vector(vec![120.0, 130.0]));
            let b = tape.leaf(Tensor::vector(vec![121.0, 128.5]));
            let m = tape.leaf(Tensor::vector(vec![0.5, -0.5]));
            let s = tape.leaf(Tensor::scalar(0.5));
            let cy = cycle_term(&mut tape, a, b).unwrap();
            let sm = smoothness_term(&mut tape, m).unwrap();
            let adv = adversarial_forward_term(&mut tape, s).unwrap();
            let total = generator_total_term(&mut tape, cy, sm, adv, w).unwrap();
            (tape, total, b, m, s)
        };

        let (t0, total0, b0, m0, s0) = build(&w_zero);
        let g0 = t0.backward(total0, Tensor::scalar(1.0)).unwrap();
        // Cycle/smoothness leaves receive exactly zero gradient.
        assert_eq!(g0.get_or_zeros(b0, &[2]).data(), &[0.0, 0.0]);
        assert_eq!(g0.get_or_zeros(m0, &[2]).data(), &[0.0, 0.0]);
        // The adversarial input gradient equals d/ds log(s) = 1/s = 2.
        assert_eq!(g0.get(s0).unwrap().data(), &[2.0]);

        // With default weights the adversarial pathway is scaled by the
        // adversarial weight and unaffected by the other components.
        let (t1, total1, _b1, _m1, s1) = build(&w_default);
        let g1 = t1.backward(total1, Tensor::scalar(1.0)).unwrap();
        let expected = w_default.adversarial_weight() * 2.0;
        assert!((g1.get(s1).unwrap().data()[0] - expected).abs() < 1e-15);
    }
}
