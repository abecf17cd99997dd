//! Central finite-difference validation of analytic gradients.
//!
//! The oracle for every gradient path in the crate. An [`Objective`]
//! evaluates a scalar for a given parameter set and produces analytic
//! gradients through a tape; [`finite_diff_check`] perturbs each scalar
//! parameter by +/- epsilon and compares. Objectives must be
//! deterministic under repeated evaluation, so dropout masks are frozen
//! by the caller.

use crate::nets::ParameterSet;
use crate::tensor::Tensor;
use std::fmt;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// A deterministic scalar objective with analytic gradients.
pub trait Objective: Sync {
    /// Objective value at `params`.
    fn value(&self, params: &ParameterSet) -> Result<f64, String>;

    /// Analytic gradient for every tensor in `params`, in entry order.
    fn gradients(&self, params: &ParameterSet) -> Result<Vec<Tensor>, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum GradCheckError {
    /// The objective returned a non-finite value at a perturbation.
    NonFiniteObjective {
        tensor: String,
        entry: usize,
        sign: f64,
    },
    Objective(String),
    /// Gradient list does not line up with the parameter set.
    GradientShape {
        tensor: String,
    },
}

impl fmt::Display for GradCheckError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GradCheckError::NonFiniteObjective {
                tensor,
                entry,
                sign,
            } => write!(
                f,
                "objective non-finite when perturbing {tensor}[{entry}] by {sign:+}*eps"
            ),
            GradCheckError::Objective(msg) => write!(f, "objective failed: {msg}"),
            GradCheckError::GradientShape { tensor } => {
                write!(f, "analytic gradient shape mismatch for {tensor}")
            }
        }
    }
}

impl std::error::Error for GradCheckError {}

/// Worst relative error for one parameter tensor.
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub max_rel_err: f64,
    /// Entry index where the worst error occurred.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_tensor: Vec<TensorCheck>,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    /// Name of the first failing tensor, if any.
    pub fn first_failure(&self) -> Option<&TensorCheck> {
        self.per_tensor.iter().find(|t| !t.passed)
    }
}

/// Floor for the relative-error denominator. Central differences in
/// f64 resolve an O(1) objective's gradient to roughly u^(2/3)|f| ~ 3e-11
/// absolute, so the floor must sit above resolution / tolerance or
/// entries with near-zero true gradient fail on rounding noise alone.
pub const REL_ERR_FLOOR: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compare the objective's analytic gradients against central finite
/// differences, one scalar parameter at a time.
pub fn finite_diff_check(
    objective: &dyn Objective,
    params: &ParameterSet,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradCheckError> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    let analytic = objective
        .gradients(params)
        .map_err(GradCheckError::Objective)?;
    if analytic.len() != params.len() {
        return Err(GradCheckError::GradientShape {
            tensor: "<count>".into(),
        });
    }

    let mut per_tensor = Vec::with_capacity(params.len());
    let mut max_rel = 0.0f64;

    for (idx, (name, tensor)) in params.iter().enumerate() {
        let grad = &analytic[idx];
        if grad.dims() != tensor.dims() {
            return Err(GradCheckError::GradientShape {
                tensor: name.to_string(),
            });
        }
        let numeric_at = |entry: usize| -> Result<f64, GradCheckError> {
            let mut plus = params.clone();
            plus.tensor_at_mut(idx).data_mut()[entry] += epsilon;
            let f_plus = objective.value(&plus).map_err(GradCheckError::Objective)?;
            if !f_plus.is_finite() {
                return Err(GradCheckError::NonFiniteObjective {
                    tensor: name.to_string(),
                    entry,
                    sign: 1.0,
                });
            }
            let mut minus = params.clone();
            minus.tensor_at_mut(idx).data_mut()[entry] -= epsilon;
            let f_minus = objective.value(&minus).map_err(GradCheckError::Objective)?;
            if !f_minus.is_finite() {
                return Err(GradCheckError::NonFiniteObjective {
                    tensor: name.to_string(),
                    entry,
                    sign: -1.0,
                });
            }
            Ok((f_plus - f_minus) / (2.0 * epsilon))
        };

        // Perturbed evaluations are independent; fan them out.
        #[cfg(feature = "parallel")]
        let numerics: Result<Vec<f64>, GradCheckError> = (0..tensor.numel())
            .into_par_iter()
            .map(numeric_at)
            .collect();
        #[cfg(not(feature = "parallel"))]
        let numerics: Result<Vec<f64>, GradCheckError> =
            (0..tensor.numel()).map(numeric_at).collect();
        let numerics = numerics?;

        let mut worst = TensorCheck {
            name: name.to_string(),
            max_rel_err: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
            passed: true,
        };
        for (entry, &numeric) in numerics.iter().enumerate() {
            let a = grad.data()[entry];
            let e = rel_err(a, numeric);
            if e > worst.max_rel_err {
                worst.max_rel_err = e;
                worst.worst_entry = entry;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        worst.passed = worst.max_rel_err <= tolerance;
        max_rel = max_rel.max(worst.max_rel_err);
        per_tensor.push(worst);
    }

    let passed = per_tensor.iter().all(|t| t.passed);
    Ok(GradCheckReport {
        per_tensor,
        max_rel_err: max_rel,
        tolerance,
        passed,
    })
}

/// The three standard check groups run by the gradcheck command: the
/// warp block alone, the full generator objective, and the
/// discriminator objective — all with frozen dropout masks.
pub mod suite {
    use super::{finite_diff_check, GradCheckError, GradCheckReport, Objective};
    use crate::losses::{self, LossWeights};
    use crate::nets::{self, NetConfig, NetKind, ParameterSet};
    use crate::rng::Rng;
    use crate::tape::Tape;
    use crate::tensor::Tensor;
    use crate::trainer::{
        build_discriminator_objective, build_generator_objective, PairMasks, TrainUtterance,
    };
    use crate::warp::{generate_f0, generate_f0_with_gradients, Contour, Momenta, WarpConfig};

    /// Random contour in the speech range plus a pre-standardized
    /// spectrum, sized for gradient checking.
    pub fn fixture_utterance(t: usize, rng: &mut Rng, id: &str) -> TrainUtterance {
        let contour = Contour::new(
            (0..t)
                .map(|i| {
                    150.0
                        + 40.0 * ((i as f64) * 0.37 + rng.uniform(0.0, 1.0)).sin()
                        + rng.uniform(-10.0, 10.0)
                })
                .collect(),
        )
        .expect("fixture contour in range");
        let spectrum_std = Tensor::matrix(
            t,
            nets::MFCC_DIM,
            (0..t * nets::MFCC_DIM)
                .map(|_| rng.uniform(-1.5, 1.5))
                .collect(),
        );
        TrainUtterance {
            id: id.to_string(),
            contour,
            spectrum_std,
        }
    }

    /// Warp block alone: parameters are the momenta and the source
    /// contour; the scalar objective is a fixed random weighting of the
    /// output contour.
    pub struct WarpObjective {
        cfg: WarpConfig,
        weights: Vec<f64>,
    }

    impl WarpObjective {
        pub fn new(t: usize, seed: u64, cfg: WarpConfig) -> (Self, ParameterSet) {
            let mut rng = Rng::from_seed(seed);
            let mut params = ParameterSet::new(rng.derive(1));
            let momenta: Vec<f64> = (0..t).map(|_| rng.uniform(-4.0, 4.0)).collect();
            let source: Vec<f64> = (0..t).map(|_| rng.uniform(100.0, 300.0)).collect();
            params.insert("momenta", Tensor::vector(momenta)).unwrap();
            params.insert("source", Tensor::vector(source)).unwrap();
            let weights = (0..t).map(|_| rng.uniform(-1.0, 1.0)).collect();
            (WarpObjective { cfg, weights }, params)
        }

        fn unpack(&self, params: &ParameterSet) -> Result<(Momenta, Contour), String> {
            let m = params.get("momenta").ok_or("missing momenta")?;
            let p = params.get("source").ok_or("missing source")?;
            let momenta = Momenta::new(m.data().to_vec()).map_err(|e| e.to_string())?;
            let source = Contour::new(p.data().to_vec()).map_err(|e| e.to_string())?;
            Ok((momenta, source))
        }
    }

    impl Objective for WarpObjective {
        fn value(&self, params: &ParameterSet) -> Result<f64, String> {
            let (momenta, source) = self.unpack(params)?;
            let out = generate_f0(&momenta, &source, &self.cfg).map_err(|e| e.to_string())?;
            Ok(out
                .values()
                .iter()
                .zip(self.weights.iter())
                .map(|(o, w)| o * w)
                .sum())
        }

        fn gradients(&self, params: &ParameterSet) -> Result<Vec<Tensor>, String> {
            let (momenta, source) = self.unpack(params)?;
            let mut tape = Tape::new();
            let (_, leaves) = generate_f0_with_gradients(&momenta, &source, &self.cfg, &mut tape)
                .map_err(|e| e.to_string())?;
            let w = tape.leaf(Tensor::vector(self.weights.clone()));
            let prod = tape.mul(leaves.output, w).map_err(|e| e.to_string())?;
            let loss = tape.sum(prod).map_err(|e| e.to_string())?;
            let grads = tape
                .backward(loss, Tensor::scalar(1.0))
                .map_err(|e| e.to_string())?;
            Ok(vec![
                grads.get_or_zeros(leaves.momenta, &[momenta.len()]),
                grads.get_or_zeros(leaves.source, &[source.len()]),
            ])
        }
    }

    fn split_combined(params: &ParameterSet) -> (ParameterSet, ParameterSet) {
        let mut ab = ParameterSet::new(params.rng.clone());
        let mut ba = ParameterSet::new(params.rng.clone());
        for (name, t) in params.iter() {
            if let Some(n) = name.strip_prefix("gen_ab.") {
                ab.insert(n, t.clone()).unwrap();
            } else if let Some(n) = name.strip_prefix("gen_ba.") {
                ba.insert(n, t.clone()).unwrap();
            }
        }
        (ab, ba)
    }

    /// Full generator objective over the combined parameters of both
    /// generators (prefixed "gen_ab."/"gen_ba."), discriminator fixed.
    pub struct GeneratorLossObjective {
        net: NetConfig,
        warp: WarpConfig,
        weights: LossWeights,
        disc: ParameterSet,
        a: TrainUtterance,
        b: TrainUtterance,
        masks: PairMasks,
    }

    impl GeneratorLossObjective {
        pub fn new(t: usize, seed: u64, net: NetConfig) -> (Self, ParameterSet) {
            let warp = WarpConfig::default();
            let weights = LossWeights::default();
            let mut rng = Rng::from_seed(seed);
            let a = fixture_utterance(t, &mut rng, "check_a");
            let b = fixture_utterance(t, &mut rng, "check_b");
            let gen_ab = nets::init_params(NetKind::Generator, &net, seed ^ 0xA1).unwrap();
            let gen_ba = nets::init_params(NetKind::Generator, &net, seed ^ 0xB2).unwrap();
            let disc = nets::init_params(NetKind::Discriminator, &net, seed ^ 0xD3).unwrap();
            let mut mask_rng_ab = rng.derive(100);
            let mut mask_rng_ba = rng.derive(200);
            let masks = PairMasks::draw(&mut mask_rng_ab, &mut mask_rng_ba, &net, t, true);

            let mut combined = ParameterSet::new(rng.derive(3));
            for (name, tensor) in gen_ab.iter() {
                combined
                    .insert(&format!("gen_ab.{name}"), tensor.clone())
                    .unwrap();
            }
            for (name, tensor) in gen_ba.iter() {
                combined
                    .insert(&format!("gen_ba.{name}"), tensor.clone())
                    .unwrap();
            }
            (
                GeneratorLossObjective {
                    net,
                    warp,
                    weights,
                    disc,
                    a,
                    b,
                    masks,
                },
                combined,
            )
        }
    }

    fn plain_smoothness(m: &[f64]) -> f64 {
        if m.len() < 2 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..m.len() - 1 {
            let d = m[i + 1] - m[i];
            acc += d * d;
        }
        acc / (m.len() - 1) as f64
    }

    fn plain_cycle(a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            acc += (x - y).abs();
        }
        acc / a.len() as f64
    }

    fn log_sigmoid(z: f64) -> f64 {
        nets::sigmoid_scalar(z).ln()
    }

    impl Objective for GeneratorLossObjective {
        fn value(&self, params: &ParameterSet) -> Result<f64, String> {
            let (gen_ab, gen_ba) = split_combined(params);
            let err = |e: nets::NetError| e.to_string();
            let werr = |e: crate::warp::WarpError| e.to_string();

            let a_f0 = self.a.contour.values();
            let b_f0 = self.b.contour.values();

            // Forward chain.
            let m_fwd = nets::generator_momenta_plain(
                &gen_ab,
                &self.net,
                &self.a.spectrum_std,
                a_f0,
                Some(&self.masks.ab_primary),
            )
            .map_err(err)?;
            let b_gen = generate_f0(
                &Momenta::new(m_fwd.clone()).map_err(werr)?,
                &self.a.contour,
                &self.warp,
            )
            .map_err(werr)?;
            let z_fwd =
                nets::discriminator_logit_plain(&self.disc, &self.net, a_f0, b_gen.values())
                    .map_err(err)?;
            let m_fwd_cycle = nets::generator_momenta_plain(
                &gen_ba,
                &self.net,
                &self.a.spectrum_std,
                b_gen.values(),
                self.masks.ba_cycle.as_ref(),
            )
            .map_err(err)?;
            let a_rec = generate_f0(
                &Momenta::new(m_fwd_cycle).map_err(werr)?,
                &b_gen,
                &self.warp,
            )
            .map_err(werr)?;

            // Backward chain.
            let m_bwd = nets::generator_momenta_plain(
                &gen_ba,
                &self.net,
                &self.b.spectrum_std,
                b_f0,
                Some(&self.masks.ba_primary),
            )
            .map_err(err)?;
            let a_gen = generate_f0(
                &Momenta::new(m_bwd.clone()).map_err(werr)?,
                &self.b.contour,
                &self.warp,
            )
            .map_err(werr)?;
            let z_bwd =
                nets::discriminator_logit_plain(&self.disc, &self.net, a_gen.values(), b_f0)
                    .map_err(err)?;
            let m_bwd_cycle = nets::generator_momenta_plain(
                &gen_ab,
                &self.net,
                &self.b.spectrum_std,
                a_gen.values(),
                self.masks.ab_cycle.as_ref(),
            )
            .map_err(err)?;
            let b_rec = generate_f0(
                &Momenta::new(m_bwd_cycle).map_err(werr)?,
                &a_gen,
                &self.warp,
            )
            .map_err(werr)?;

            let total_ab = losses::generator_total(
                plain_cycle(a_f0, a_rec.values()),
                plain_smoothness(&m_fwd),
                log_sigmoid(z_fwd),
                &self.weights,
            )
            .map_err(|e| e.to_string())?;
            let total_ba = losses::generator_total(
                plain_cycle(b_f0, b_rec.values()),
                plain_smoothness(&m_bwd),
                log_sigmoid(-z_bwd),
                &self.weights,
            )
            .map_err(|e| e.to_string())?;
            Ok(total_ab.total + total_ba.total)
        }

        fn gradients(&self, params: &ParameterSet) -> Result<Vec<Tensor>, String> {
            let (gen_ab, gen_ba) = split_combined(params);
            let mut tape = Tape::new();
            let built = build_generator_objective(
                &mut tape,
                &gen_ab,
                &gen_ba,
                &self.disc,
                &self.net,
                &self.warp,
                &self.weights,
                &self.a,
                &self.b,
                &self.masks,
            )
            .map_err(|e| e.to_string())?;
            let grads = tape
                .backward(built.loss, Tensor::scalar(1.0))
                .map_err(|e| e.to_string())?;
            let mut out = Vec::with_capacity(params.len());
            for (i, &id) in built.ids_ab.iter().enumerate() {
                out.push(grads.get_or_zeros(id, gen_ab.tensor_at(i).dims()));
            }
            for (i, &id) in built.ids_ba.iter().enumerate() {
                out.push(grads.get_or_zeros(id, gen_ba.tensor_at(i).dims()));
            }
            Ok(out)
        }
    }

    /// Discriminator objective over the discriminator parameters, with
    /// both generators fixed.
    pub struct DiscriminatorLossObjective {
        net: NetConfig,
        warp: WarpConfig,
        gen_ab: ParameterSet,
        gen_ba: ParameterSet,
        a: TrainUtterance,
        b: TrainUtterance,
        masks: PairMasks,
    }

    impl DiscriminatorLossObjective {
        pub fn new(t: usize, seed: u64, net: NetConfig) -> (Self, ParameterSet) {
            let warp = WarpConfig::default();
            let mut rng = Rng::from_seed(seed ^ 0x5eed);
            let a = fixture_utterance(t, &mut rng, "check_a");
            let b = fixture_utterance(t, &mut rng, "check_b");
            let gen_ab = nets::init_params(NetKind::Generator, &net, seed ^ 0xA7).unwrap();
            let gen_ba = nets::init_params(NetKind::Generator, &net, seed ^ 0xB8).unwrap();
            let disc = nets::init_params(NetKind::Discriminator, &net, seed ^ 0xD9).unwrap();
            let mut mask_rng_ab = rng.derive(101);
            let mut mask_rng_ba = rng.derive(201);
            let masks = PairMasks::draw(&mut mask_rng_ab, &mut mask_rng_ba, &net, t, false);
            (
                DiscriminatorLossObjective {
                    net,
                    warp,
                    gen_ab,
                    gen_ba,
                    a,
                    b,
                    masks,
                },
                disc,
            )
        }
    }

    impl Objective for DiscriminatorLossObjective {
        fn value(&self, params: &ParameterSet) -> Result<f64, String> {
            let err = |e: nets::NetError| e.to_string();
            let werr = |e: crate::warp::WarpError| e.to_string();
            let m_fwd = nets::generator_momenta_plain(
                &self.gen_ab,
                &self.net,
                &self.a.spectrum_std,
                self.a.contour.values(),
                Some(&self.masks.ab_primary),
            )
            .map_err(err)?;
            let b_gen = generate_f0(
                &Momenta::new(m_fwd).map_err(werr)?,
                &self.a.contour,
                &self.warp,
            )
            .map_err(werr)?;
            let z_fwd = nets::discriminator_logit_plain(
                params,
                &self.net,
                self.a.contour.values(),
                b_gen.values(),
            )
            .map_err(err)?;
            let m_bwd = nets::generator_momenta_plain(
                &self.gen_ba,
                &self.net,
                &self.b.spectrum_std,
                self.b.contour.values(),
                Some(&self.masks.ba_primary),
            )
            .map_err(err)?;
            let a_gen = generate_f0(
                &Momenta::new(m_bwd).map_err(werr)?,
                &self.b.contour,
                &self.warp,
            )
            .map_err(werr)?;
            let z_bwd = nets::discriminator_logit_plain(
                params,
                &self.net,
                a_gen.values(),
                self.b.contour.values(),
            )
            .map_err(err)?;
            Ok(-(log_sigmoid(z_fwd) + log_sigmoid(-z_bwd)))
        }

        fn gradients(&self, params: &ParameterSet) -> Result<Vec<Tensor>, String> {
            let mut tape = Tape::new();
            let built = build_discriminator_objective(
                &mut tape,
                &self.gen_ab,
                &self.gen_ba,
                params,
                &self.net,
                &self.warp,
                &self.a,
                &self.b,
                &self.masks,
            )
            .map_err(|e| e.to_string())?;
            let grads = tape
                .backward(built.loss, Tensor::scalar(1.0))
                .map_err(|e| e.to_string())?;
            Ok(built
                .ids_disc
                .iter()
                .enumerate()
                .map(|(i, &id)| grads.get_or_zeros(id, params.tensor_at(i).dims()))
                .collect())
        }
    }

    /// Check group (a): the warp block alone.
    pub fn check_warp(
        t: usize,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport, GradCheckError> {
        let (obj, params) = WarpObjective::new(t, seed, WarpConfig::default());
        finite_diff_check(&obj, &params, epsilon, tolerance)
    }

    /// Check group (b): the full generator objective.
    pub fn check_generator_loss(
        t: usize,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport, GradCheckError> {
        let (obj, params) = GeneratorLossObjective::new(t, seed, NetConfig::default());
        finite_diff_check(&obj, &params, epsilon, tolerance)
    }

    /// Check group (c): the discriminator objective.
    pub fn check_discriminator_loss(
        t: usize,
        seed: u64,
        epsilon: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport, GradCheckError> {
        let (obj, params) = DiscriminatorLossObjective::new(t, seed, NetConfig::default());
        finite_diff_check(&obj, &params, epsilon, tolerance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// f(x) = sum(x^2) with optionally corrupted analytic gradients.
    struct SquareObjective {
        corrupt: bool,
    }

    impl Objective for SquareObjective {
        fn value(&self, params: &ParameterSet) -> Result<f64, String> {
            let x = params.get("x").ok_or("missing x")?;
            Ok(x.data().iter().map(|v| v * v).sum())
        }

        fn gradients(&self, params: &ParameterSet) -> Result<Vec<Tensor>, String> {
            let x = params.get("x").ok_or("missing x")?;
            let mut g = x.map(|v| 2.0 * v);
            if self.corrupt {
                // Report 6 as 5: exactly the documented failure case.
                g.data_mut()[0] -= 1.0;
            }
            Ok(vec![g])
        }
    }

    fn params_with_x(values: Vec<f64>) -> ParameterSet {
        let mut p = ParameterSet::new(Rng::from_seed(0));
        p.insert("x", Tensor::vector(values)).unwrap();
        p
    }

    #[test]
    fn square_objective_passes() {
        let p = params_with_x(vec![3.0]);
        let report =
            finite_diff_check(&SquareObjective { corrupt: false }, &p, 1e-5, 1e-6).unwrap();
        assert!(report.passed);
        assert!(report.max_rel_err < 1e-9, "err {}", report.max_rel_err);
        // analytic 6 vs numeric ~6.000000...
        assert!(
            (report.per_tensor[0].analytic - 6.0).abs() < 1e-12
                || report.per_tensor[0].max_rel_err < 1e-9
        );
    }

    #[test]
    fn corrupted_gradient_fails_and_names_tensor() {
        let p = params_with_x(vec![3.0]);
        let report = finite_diff_check(&SquareObjective { corrupt: true }, &p, 1e-5, 1e-6).unwrap();
        assert!(!report.passed);
        assert_eq!(report.first_failure().unwrap().name, "x");
    }

    /// Objective that blows up under perturbation.
    struct FragileObjective;

    impl Objective for FragileObjective {
        fn value(&self, params: &ParameterSet) -> Result<f64, String> {
            let x = params.get("x").unwrap().data()[0];
            if x > 1.0 {
                Ok(f64::INFINITY)
            } else {
                Ok(x)
            }
        }
        fn gradients(&self, _params: &ParameterSet) -> Result<Vec<Tensor>, String> {
            Ok(vec![Tensor::vector(vec![1.0])])
        }
    }

    #[test]
    fn non_finite_objective_identifies_perturbation() {
        let p = params_with_x(vec![1.0]);
        match finite_diff_check(&FragileObjective, &p, 1e-5, 1e-6) {
            Err(GradCheckError::NonFiniteObjective {
                tensor,
                entry,
                sign,
            }) => {
                assert_eq!(tensor, "x");
                assert_eq!(entry, 0);
                assert_eq!(sign, 1.0);
            }
            other => panic!("expected non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn warp_suite_passes_at_t8() {
        let report = suite::check_warp(8, 3, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn full_objectives_pass_with_small_nets() {
        // Reduced channel counts keep the finite-difference sweep quick;
        // the acceptance suite runs the default-size version.
        let net = crate::nets::NetConfig {
            conv_channels: vec![4, 6],
            ..crate::nets::NetConfig::default()
        };
        let (gen_obj, gen_params) = suite::GeneratorLossObjective::new(8, 5, net.clone());
        let report = finite_diff_check(&gen_obj, &gen_params, 1e-5, 1e-4).unwrap();
        assert!(
            report.passed,
            "generator objective max rel err {} at {:?}",
            report.max_rel_err,
            report.first_failure().map(|t| t.name.clone())
        );

        let (disc_obj, disc_params) = suite::DiscriminatorLossObjective::new(8, 5, net);
        let report = finite_diff_check(&disc_obj, &disc_params, 1e-5, 1e-4).unwrap();
        assert!(
            report.passed,
            "discriminator objective max rel err {}",
            report.max_rel_err
        );
    }
}
