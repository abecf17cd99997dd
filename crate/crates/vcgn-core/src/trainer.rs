//! Alternating adversarial optimization of the two generators and the
//! shared discriminator.
//!
//! Odd epochs update the generators, even epochs the discriminator.
//! Non-parallel pairing: both emotion sides are shuffled independently
//! each epoch and zipped, dropping the longer side's leftovers. Batch
//! size follows the config (default 1); gradients within a batch are
//! averaged, clipped at a global L2 norm of 10, then applied with Adam.
//!
//! Checkpoints store float32 tensors; the live f64 state is rounded
//! through f32 at every checkpoint write, so a resumed run and an
//! uninterrupted run continue from identical state.

use crate::checkpoint::{CheckpointError, CheckpointFile, NamedTensorF32};
use crate::corpus::{self, CorpusManifest, Split, Utterance};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::nets::{
    self, BoundParams, DropoutMasks, MfccStats, NetConfig, NetError, NetKind, ParameterSet,
};
use crate::optim::{adam_step, clip_global_norm, AdamHyper, AdamState, OptimError};
use crate::rng::Rng;
use crate::tape::{Tape, TapeError, ValueId};
use crate::tensor::Tensor;
use crate::warp::{warp_on_tape, WarpConfig, WarpError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Gradient clipping threshold (global L2 norm) for every update.
pub const GRAD_CLIP_NORM: f64 = 10.0;

fn default_lr_generator() -> f64 {
    1e-4
}
fn default_lr_discriminator() -> f64 {
    1e-7
}
fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_batch_size() -> usize {
    1
}
fn default_epochs() -> u32 {
    50
}
fn default_checkpoint_every() -> u32 {
    10
}
fn default_seed() -> u64 {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_generator: f64,
    pub lr_discriminator: f64,
    /// Exponential decay for the first moment (Adam beta1).
    pub adam_beta1_decay: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub batch_size: usize,
    pub epochs: u32,
    pub checkpoint_every: u32,
    pub seed: u64,
    pub weights: LossWeights,
    pub warp: WarpConfig,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_generator: default_lr_generator(),
            lr_discriminator: default_lr_discriminator(),
            adam_beta1_decay: default_beta1(),
            adam_beta2: default_beta2(),
            adam_epsilon: default_epsilon(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            checkpoint_every: default_checkpoint_every(),
            seed: default_seed(),
            weights: LossWeights::default(),
            warp: WarpConfig::default(),
            net: NetConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Returns the list of offending keys, empty when valid.
    pub fn validate(&self) -> Vec<String> {
        let mut bad = Vec::new();
        if !(self.lr_generator > 0.0) {
            bad.push(format!("lr_generator = {}", self.lr_generator));
        }
        if !(self.lr_discriminator > 0.0) {
            bad.push(format!("lr_discriminator = {}", self.lr_discriminator));
        }
        if !(0.0..1.0).contains(&self.adam_beta1_decay) {
            bad.push(format!("adam_beta1_decay = {}", self.adam_beta1_decay));
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            bad.push(format!("adam_beta2 = {}", self.adam_beta2));
        }
        if !(self.adam_epsilon > 0.0) {
            bad.push(format!("adam_epsilon = {}", self.adam_epsilon));
        }
        if self.batch_size < 1 {
            bad.push(format!("batch_size = {}", self.batch_size));
        }
        if self.epochs < 1 {
            bad.push(format!("epochs = {}", self.epochs));
        }
        if self.checkpoint_every < 1 {
            bad.push(format!("checkpoint_every = {}", self.checkpoint_every));
        }
        if self.weights.validate().is_err() {
            bad.push(format!(
                "weights.lambda_c = {}, weights.lambda_m = {}",
                self.weights.lambda_c, self.weights.lambda_m
            ));
        }
        if self.warp.validate().is_err() {
            bad.push("warp".to_string());
        }
        if self.net.validate().is_err() {
            bad.push("net".to_string());
        }
        bad
    }

    fn gen_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr_generator,
            beta1: self.adam_beta1_decay,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    fn disc_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr_discriminator,
            beta1: self.adam_beta1_decay,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    Config(Vec<String>),
    Corpus(corpus::CorpusError),
    Net(NetError),
    Warp(WarpError),
    Tape(TapeError),
    Optim {
        epoch: u32,
        source: OptimError,
    },
    NonFinite {
        epoch: u32,
        detail: String,
        last_checkpoint: Option<PathBuf>,
    },
    Checkpoint(CheckpointError),
    EmptySide {
        emotion: String,
    },
    Io(std::io::Error),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Config(keys) => write!(f, "invalid config: {}", keys.join(", ")),
            TrainError::Corpus(e) => write!(f, "{e}"),
            TrainError::Net(e) => write!(f, "{e}"),
            TrainError::Warp(e) => write!(f, "{e}"),
            TrainError::Tape(e) => write!(f, "{e}"),
            TrainError::Optim { epoch, source } => {
                write!(f, "optimizer failure at epoch {epoch}: {source}")
            }
            TrainError::NonFinite {
                epoch,
                detail,
                last_checkpoint,
            } => {
                write!(f, "non-finite value at epoch {epoch}: {detail}")?;
                match last_checkpoint {
                    Some(p) => write!(f, " (last good checkpoint: {})", p.display()),
                    None => write!(f, " (no checkpoint written yet)"),
                }
            }
            TrainError::Checkpoint(e) => write!(f, "{e}"),
            TrainError::EmptySide { emotion } => {
                write!(f, "no training utterances for emotion {emotion:?}")
            }
            TrainError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<corpus::CorpusError> for TrainError {
    fn from(e: corpus::CorpusError) -> Self {
        TrainError::Corpus(e)
    }
}
impl From<NetError> for TrainError {
    fn from(e: NetError) -> Self {
        TrainError::Net(e)
    }
}
impl From<WarpError> for TrainError {
    fn from(e: WarpError) -> Self {
        TrainError::Warp(e)
    }
}
impl From<TapeError> for TrainError {
    fn from(e: TapeError) -> Self {
        TrainError::Tape(e)
    }
}
impl From<CheckpointError> for TrainError {
    fn from(e: CheckpointError) -> Self {
        TrainError::Checkpoint(e)
    }
}
impl From<std::io::Error> for TrainError {
    fn from(e: std::io::Error) -> Self {
        TrainError::Io(e)
    }
}

/// An utterance preprocessed for training: windowed to the fixed frame
/// count with the spectrum already standardized.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub id: String,
    pub contour: crate::warp::Contour,
    pub spectrum_std: Tensor,
}

fn fnv1a(s: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Window to the fixed frame count and standardize spectra. Window
/// choice is keyed by (seed, utterance id) so it does not depend on
/// processing order or resume points.
pub fn prepare_utterances(utts: &[Utterance], stats: &MfccStats, seed: u64) -> Vec<TrainUtterance> {
    utts.iter()
        .map(|u| {
            let w = corpus::window_128(u, seed ^ fnv1a(&u.id));
            TrainUtterance {
                id: w.id.clone(),
                spectrum_std: stats.standardize(&w.spectrum),
                contour: w.contour,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochRole {
    Generator,
    Discriminator,
}

impl EpochRole {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpochRole::Generator => "generator",
            EpochRole::Discriminator => "discriminator",
        }
    }
}

/// Per-epoch mean loss components. Generator fields are None on
/// discriminator epochs (those forward passes skip the cycle legs).
#[derive(Debug, Clone)]
pub struct EpochSummary {
    pub epoch: u32,
    pub role: EpochRole,
    pub cycle: Option<f64>,
    pub momenta_smoothness: Option<f64>,
    pub adversarial: Option<f64>,
    pub total: Option<f64>,
    pub disc_loss: f64,
}

pub const HISTORY_HEADER: &str = "epoch,role,cycle,momenta_smoothness,adversarial,total,disc_loss";

fn opt_field(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl EpochSummary {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.role.as_str(),
            opt_field(self.cycle),
            opt_field(self.momenta_smoothness),
            opt_field(self.adversarial),
            opt_field(self.total),
            self.disc_loss
        )
    }
}

/// Full training state.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub pair_source: String,
    pub pair_target: String,
    pub stats: MfccStats,
    pub gen_ab: ParameterSet,
    pub gen_ba: ParameterSet,
    pub disc: ParameterSet,
    pub adam_gen_ab: AdamState,
    pub adam_gen_ba: AdamState,
    pub adam_disc: AdamState,
    /// Completed epochs.
    pub epoch: u32,
    /// Master stream: epoch shuffles.
    pub rng: Rng,
    /// Fully-qualified parameter names (e.g. "gen_ab.gain") excluded
    /// from updates. Test harness knob, not serialized.
    pub frozen: BTreeSet<String>,
}

const SET_NAMES: [&str; 3] = ["gen_ab", "gen_ba", "disc"];

impl Trainer {
    pub fn new(
        cfg: TrainConfig,
        pair_source: &str,
        pair_target: &str,
        stats: MfccStats,
    ) -> Result<Self, TrainError> {
        let bad = cfg.validate();
        if !bad.is_empty() {
            return Err(TrainError::Config(bad));
        }
        let master = Rng::from_seed(cfg.seed);
        let mut gen_ab = nets::init_params(NetKind::Generator, &cfg.net, cfg.seed ^ 0xA1)?;
        let mut gen_ba = nets::init_params(NetKind::Generator, &cfg.net, cfg.seed ^ 0xB2)?;
        let mut disc = nets::init_params(NetKind::Discriminator, &cfg.net, cfg.seed ^ 0xD3)?;
        gen_ab.rng = master.derive(11);
        gen_ba.rng = master.derive(12);
        disc.rng = master.derive(13);
        let adam_gen_ab = AdamState::new(&gen_ab);
        let adam_gen_ba = AdamState::new(&gen_ba);
        let adam_disc = AdamState::new(&disc);
        Ok(Trainer {
            cfg,
            pair_source: pair_source.to_string(),
            pair_target: pair_target.to_string(),
            stats,
            gen_ab,
            gen_ba,
            disc,
            adam_gen_ab,
            adam_gen_ba,
            adam_disc,
            epoch: 0,
            rng: master.derive(1),
            frozen: BTreeSet::new(),
        })
    }

    /// Role of the next epoch: strict alternation starting with a
    /// generator epoch.
    pub fn next_role(&self) -> EpochRole {
        if (self.epoch + 1) % 2 == 1 {
            EpochRole::Generator
        } else {
            EpochRole::Discriminator
        }
    }

    /// Run one epoch over independently shuffled sides.
    pub fn train_epoch(
        &mut self,
        side_a: &[TrainUtterance],
        side_b: &[TrainUtterance],
    ) -> Result<EpochSummary, TrainError> {
        if side_a.is_empty() {
            return Err(TrainError::EmptySide {
                emotion: self.pair_source.clone(),
            });
        }
        if side_b.is_empty() {
            return Err(TrainError::EmptySide {
                emotion: self.pair_target.clone(),
            });
        }
        let role = self.next_role();
        let epoch = self.epoch + 1;

        let mut idx_a: Vec<usize> = (0..side_a.len()).collect();
        let mut idx_b: Vec<usize> = (0..side_b.len()).collect();
        self.rng.shuffle(&mut idx_a);
        self.rng.shuffle(&mut idx_b);
        let n_pairs = idx_a.len().min(idx_b.len());
        let pairs: Vec<(usize, usize)> = idx_a.into_iter().zip(idx_b).take(n_pairs).collect();

        let mut sums = SummaryAccum::default();

        for batch in pairs.chunks(self.cfg.batch_size) {
            match role {
                EpochRole::Generator => {
                    self.generator_batch(batch, side_a, side_b, epoch, &mut sums)?
                }
                EpochRole::Discriminator => {
                    self.discriminator_batch(batch, side_a, side_b, epoch, &mut sums)?
                }
            }
        }

        self.epoch = epoch;
        Ok(sums.finish(epoch, role))
    }

    fn generator_batch(
        &mut self,
        batch: &[(usize, usize)],
        side_a: &[TrainUtterance],
        side_b: &[TrainUtterance],
        epoch: u32,
        sums: &mut SummaryAccum,
    ) -> Result<(), TrainError> {
        let mut grad_ab: Option<Vec<Tensor>> = None;
        let mut grad_ba: Option<Vec<Tensor>> = None;

        for &(ia, ib) in batch {
            let a = &side_a[ia];
            let b = &side_b[ib];
            let masks = PairMasks::draw(
                &mut self.gen_ab.rng,
                &mut self.gen_ba.rng,
                &self.cfg.net,
                corpus::FRAMES,
                true,
            );
            let mut tape = Tape::new();
            let built = build_generator_objective(
                &mut tape,
                &self.gen_ab,
                &self.gen_ba,
                &self.disc,
                &self.cfg.net,
                &self.cfg.warp,
                &self.cfg.weights,
                a,
                b,
                &masks,
            )?;
            let grads = tape.backward(built.loss, Tensor::scalar(1.0))?;
            accumulate(&mut grad_ab, &self.gen_ab, &built.ids_ab, &grads);
            accumulate(&mut grad_ba, &self.gen_ba, &built.ids_ba, &grads);

            sums.push_gen(&built.breakdown_ab, &built.breakdown_ba);
            sums.push_disc(
                losses::discriminator_loss(&[built.score_fwd], &[built.score_bwd]).map_err(
                    |e| TrainError::NonFinite {
                        epoch,
                        detail: e.to_string(),
                        last_checkpoint: None,
                    },
                )?,
            );
        }

        let scale = 1.0 / batch.len() as f64;
        let mut g_ab = scale_grads(grad_ab.unwrap(), scale);
        let mut g_ba = scale_grads(grad_ba.unwrap(), scale);
        zero_frozen(&self.frozen, "gen_ab", &self.gen_ab, &mut g_ab);
        zero_frozen(&self.frozen, "gen_ba", &self.gen_ba, &mut g_ba);

        // One global clip across both generators.
        let mut all: Vec<Tensor> = g_ab.into_iter().chain(g_ba).collect();
        clip_global_norm(&mut all, GRAD_CLIP_NORM);
        let g_ba = all.split_off(self.gen_ab.len());
        let g_ab = all;

        let hp = self.cfg.gen_hyper();
        adam_step(&mut self.gen_ab, &g_ab, &mut self.adam_gen_ab, &hp)
            .map_err(|source| TrainError::Optim { epoch, source })?;
        adam_step(&mut self.gen_ba, &g_ba, &mut self.adam_gen_ba, &hp)
            .map_err(|source| TrainError::Optim { epoch, source })?;
        Ok(())
    }

    fn discriminator_batch(
        &mut self,
        batch: &[(usize, usize)],
        side_a: &[TrainUtterance],
        side_b: &[TrainUtterance],
        epoch: u32,
        sums: &mut SummaryAccum,
    ) -> Result<(), TrainError> {
        let mut grad_d: Option<Vec<Tensor>> = None;

        for &(ia, ib) in batch {
            let a = &side_a[ia];
            let b = &side_b[ib];
            let masks = PairMasks::draw(
                &mut self.gen_ab.rng,
                &mut self.gen_ba.rng,
                &self.cfg.net,
                corpus::FRAMES,
                false,
            );
            let mut tape = Tape::new();
            let built = build_discriminator_objective(
                &mut tape,
                &self.gen_ab,
                &self.gen_ba,
                &self.disc,
                &self.cfg.net,
                &self.cfg.warp,
                a,
                b,
                &masks,
            )?;
            let grads = tape.backward(built.loss, Tensor::scalar(1.0))?;
            accumulate(&mut grad_d, &self.disc, &built.ids_disc, &grads);
            sums.push_disc(built.loss_value);
        }

        let scale = 1.0 / batch.len() as f64;
        let mut g_d = scale_grads(grad_d.unwrap(), scale);
        zero_frozen(&self.frozen, "disc", &self.disc, &mut g_d);
        clip_global_norm(&mut g_d, GRAD_CLIP_NORM);
        adam_step(
            &mut self.disc,
            &g_d,
            &mut self.adam_disc,
            &self.cfg.disc_hyper(),
        )
        .map_err(|source| TrainError::Optim { epoch, source })?;
        Ok(())
    }

    /// Round all trainable state through f32 and assemble a checkpoint.
    /// The rounding keeps the live state identical to what a resumed run
    /// will load.
    pub fn to_checkpoint(&mut self) -> CheckpointFile {
        for set in [&mut self.gen_ab, &mut self.gen_ba, &mut self.disc] {
            for i in 0..set.len() {
                set.tensor_at_mut(i).snap_to_f32();
            }
        }
        for adam in [
            &mut self.adam_gen_ab,
            &mut self.adam_gen_ba,
            &mut self.adam_disc,
        ] {
            for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
                t.snap_to_f32();
            }
        }

        let mut tensors = Vec::new();
        let sets = [&self.gen_ab, &self.gen_ba, &self.disc];
        for (set, set_name) in sets.iter().zip(SET_NAMES) {
            for (name, t) in set.iter() {
                tensors.push(named_f32(&format!("{set_name}.{name}"), t));
            }
        }
        let adams = [&self.adam_gen_ab, &self.adam_gen_ba, &self.adam_disc];
        for (adam, set_name) in adams.iter().zip(SET_NAMES) {
            for (i, (name, _)) in sets[SET_NAMES.iter().position(|s| *s == set_name).unwrap()]
                .iter()
                .enumerate()
            {
                tensors.push(named_f32(&format!("adam_m.{set_name}.{name}"), &adam.m[i]));
                tensors.push(named_f32(&format!("adam_v.{set_name}.{name}"), &adam.v[i]));
            }
        }

        let meta = MetaJson {
            pair_source: self.pair_source.clone(),
            pair_target: self.pair_target.clone(),
            epoch: self.epoch,
            adam_t_gen_ab: self.adam_gen_ab.t,
            adam_t_gen_ba: self.adam_gen_ba.t,
            adam_t_disc: self.adam_disc.t,
            rng_master: self.rng.state(),
            rng_gen_ab: self.gen_ab.rng.state(),
            rng_gen_ba: self.gen_ba.rng.state(),
            rng_disc: self.disc.rng.state(),
            mfcc_mean: self.stats.mean.clone(),
            mfcc_std: self.stats.std.clone(),
            config: self.cfg.clone(),
        };
        let meta_json = serde_json::to_vec(&meta).expect("metadata serializes");
        CheckpointFile { tensors, meta_json }
    }

    pub fn from_checkpoint(ck: &CheckpointFile) -> Result<Self, TrainError> {
        let meta: MetaJson = serde_json::from_slice(&ck.meta_json)
            .map_err(|e| TrainError::Checkpoint(CheckpointError::Meta(e.to_string())))?;
        let bad = meta.config.validate();
        if !bad.is_empty() {
            return Err(TrainError::Config(bad));
        }

        let mut sets: Vec<ParameterSet> = Vec::with_capacity(3);
        for set_name in SET_NAMES {
            let prefix = format!("{set_name}.");
            let mut set = ParameterSet::new(Rng::from_seed(0));
            for t in &ck.tensors {
                if let Some(name) = t.name.strip_prefix(&prefix) {
                    set.insert(name, tensor_from_f32(t))?;
                }
            }
            if set.is_empty() {
                return Err(TrainError::Checkpoint(CheckpointError::MissingTensor {
                    name: format!("{set_name}.*"),
                }));
            }
            sets.push(set);
        }
        let mut disc = sets.pop().unwrap();
        let mut gen_ba = sets.pop().unwrap();
        let mut gen_ab = sets.pop().unwrap();

        let load_adam =
            |set: &ParameterSet, set_name: &str, t: u64| -> Result<AdamState, TrainError> {
                let mut m = Vec::with_capacity(set.len());
                let mut v = Vec::with_capacity(set.len());
                for (name, _) in set.iter() {
                    m.push(tensor_from_f32(
                        ck.tensor(&format!("adam_m.{set_name}.{name}"))?,
                    ));
                    v.push(tensor_from_f32(
                        ck.tensor(&format!("adam_v.{set_name}.{name}"))?,
                    ));
                }
                Ok(AdamState { t, m, v })
            };
        let adam_gen_ab = load_adam(&gen_ab, "gen_ab", meta.adam_t_gen_ab)?;
        let adam_gen_ba = load_adam(&gen_ba, "gen_ba", meta.adam_t_gen_ba)?;
        let adam_disc = load_adam(&disc, "disc", meta.adam_t_disc)?;

        gen_ab.rng = Rng::from_state(meta.rng_gen_ab);
        gen_ba.rng = Rng::from_state(meta.rng_gen_ba);
        disc.rng = Rng::from_state(meta.rng_disc);

        Ok(Trainer {
            cfg: meta.config,
            pair_source: meta.pair_source,
            pair_target: meta.pair_target,
            stats: MfccStats {
                mean: meta.mfcc_mean,
                std: meta.mfcc_std,
            },
            gen_ab,
            gen_ba,
            disc,
            adam_gen_ab,
            adam_gen_ba,
            adam_disc,
            epoch: meta.epoch,
            rng: Rng::from_state(meta.rng_master),
            frozen: BTreeSet::new(),
        })
    }

    pub fn all_params_finite(&self) -> bool {
        self.gen_ab.all_finite() && self.gen_ba.all_finite() && self.disc.all_finite()
    }
}

fn named_f32(name: &str, t: &Tensor) -> NamedTensorF32 {
    NamedTensorF32 {
        name: name.to_string(),
        dims: t.dims().iter().map(|&d| d as u32).collect(),
        data: t.to_f32(),
    }
}

fn tensor_from_f32(t: &NamedTensorF32) -> Tensor {
    Tensor::from_vec(
        t.dims.iter().map(|&d| d as usize).collect(),
        t.data.iter().map(|&v| v as f64).collect(),
    )
}

#[derive(Serialize, Deserialize)]
struct MetaJson {
    pair_source: String,
    pair_target: String,
    epoch: u32,
    adam_t_gen_ab: u64,
    adam_t_gen_ba: u64,
    adam_t_disc: u64,
    rng_master: [u64; 4],
    rng_gen_ab: [u64; 4],
    rng_gen_ba: [u64; 4],
    rng_disc: [u64; 4],
    mfcc_mean: Vec<f64>,
    mfcc_std: Vec<f64>,
    config: TrainConfig,
}

#[derive(Default)]
struct SummaryAccum {
    cycle: f64,
    smooth: f64,
    adv: f64,
    total: f64,
    gen_count: usize,
    disc: f64,
    disc_count: usize,
}

impl SummaryAccum {
    fn push_gen(&mut self, ab: &LossBreakdown, ba: &LossBreakdown) {
        self.cycle += 0.5 * (ab.cycle + ba.cycle);
        self.smooth += 0.5 * (ab.momenta_smoothness + ba.momenta_smoothness);
        self.adv += 0.5 * (ab.adversarial + ba.adversarial);
        self.total += 0.5 * (ab.total + ba.total);
        self.gen_count += 1;
    }

    fn push_disc(&mut self, loss: f64) {
        self.disc += loss;
        self.disc_count += 1;
    }

    fn finish(self, epoch: u32, role: EpochRole) -> EpochSummary {
        let gen = |v: f64| {
            if self.gen_count > 0 {
                Some(v / self.gen_count as f64)
            } else {
                None
            }
        };
        EpochSummary {
            epoch,
            role,
            cycle: gen(self.cycle),
            momenta_smoothness: gen(self.smooth),
            adversarial: gen(self.adv),
            total: gen(self.total),
            disc_loss: self.disc / self.disc_count.max(1) as f64,
        }
    }
}

fn accumulate(
    into: &mut Option<Vec<Tensor>>,
    params: &ParameterSet,
    ids: &[ValueId],
    grads: &crate::tape::Gradients,
) {
    let fresh: Vec<Tensor> = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| grads.get_or_zeros(id, params.tensor_at(i).dims()))
        .collect();
    match into {
        Some(acc) => {
            for (a, g) in acc.iter_mut().zip(fresh.iter()) {
                a.add_assign(g);
            }
        }
        None => *into = Some(fresh),
    }
}

fn scale_grads(mut grads: Vec<Tensor>, scale: f64) -> Vec<Tensor> {
    if scale != 1.0 {
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    grads
}

fn zero_frozen(
    frozen: &BTreeSet<String>,
    set_name: &str,
    params: &ParameterSet,
    grads: &mut [Tensor],
) {
    if frozen.is_empty() {
        return;
    }
    for (i, (name, _)) in params.iter().enumerate() {
        if frozen.contains(&format!("{set_name}.{name}")) {
            for v in grads[i].data_mut() {
                *v = 0.0;
            }
        }
    }
}

/// Dropout masks for the four generator forwards of one utterance pair.
/// `with_cycle` draws the cycle-leg masks too (generator epochs).
pub struct PairMasks {
    pub ab_primary: DropoutMasks,
    pub ab_cycle: Option<DropoutMasks>,
    pub ba_primary: DropoutMasks,
    pub ba_cycle: Option<DropoutMasks>,
}

impl PairMasks {
    pub fn draw(
        rng_ab: &mut Rng,
        rng_ba: &mut Rng,
        cfg: &NetConfig,
        frames: usize,
        with_cycle: bool,
    ) -> Self {
        let ab_primary = nets::draw_generator_masks(rng_ab, cfg, frames);
        let ab_cycle = with_cycle.then(|| nets::draw_generator_masks(rng_ab, cfg, frames));
        let ba_cycle = with_cycle.then(|| nets::draw_generator_masks(rng_ba, cfg, frames));
        let ba_primary = nets::draw_generator_masks(rng_ba, cfg, frames);
        PairMasks {
            ab_primary,
            ab_cycle,
            ba_primary,
            ba_cycle,
        }
    }
}

/// Result of building the combined generator objective on a tape.
pub struct GeneratorObjective {
    pub loss: ValueId,
    pub ids_ab: Vec<ValueId>,
    pub ids_ba: Vec<ValueId>,
    pub ids_disc: Vec<ValueId>,
    pub breakdown_ab: LossBreakdown,
    pub breakdown_ba: LossBreakdown,
    pub score_fwd: f64,
    pub score_bwd: f64,
    /// Generated target-side contour (forward conversion of `a`).
    pub converted_ab: ValueId,
}

/// Record both conversion chains, both cycle reconstructions and the
/// weighted objectives of the two generators; the returned loss is their
/// sum, so one backward sweep serves both parameter sets.
#[allow(clippy::too_many_arguments)]
pub fn build_generator_objective(
    tape: &mut Tape,
    gen_ab: &ParameterSet,
    gen_ba: &ParameterSet,
    disc: &ParameterSet,
    net: &NetConfig,
    warp: &WarpConfig,
    weights: &LossWeights,
    a: &TrainUtterance,
    b: &TrainUtterance,
    masks: &PairMasks,
) -> Result<GeneratorObjective, TrainError> {
    let bound_ab = BoundParams::bind(tape, gen_ab);
    let bound_ba = BoundParams::bind(tape, gen_ba);
    let bound_disc = BoundParams::bind(tape, disc);

    let a_f0 = tape.leaf(Tensor::vector(a.contour.values().to_vec()));
    let a_spec = tape.leaf(a.spectrum_std.clone());
    let b_f0 = tape.leaf(Tensor::vector(b.contour.values().to_vec()));
    let b_spec = tape.leaf(b.spectrum_std.clone());

    // Forward chain: a -> (gen_ab, warp) -> b' -> (gen_ba, warp) -> a~.
    let m_fwd = nets::generator_momenta_on_tape(
        tape,
        &bound_ab,
        net,
        a_spec,
        a_f0,
        Some(&masks.ab_primary),
    )?;
    let b_gen = warp_on_tape(tape, m_fwd, a_f0, warp)?;
    let z_fwd = nets::discriminator_logit_on_tape(tape, &bound_disc, net, a_f0, b_gen)?;
    let m_fwd_cycle = nets::generator_momenta_on_tape(
        tape,
        &bound_ba,
        net,
        a_spec,
        b_gen,
        masks.ba_cycle.as_ref(),
    )?;
    let a_rec = warp_on_tape(tape, m_fwd_cycle, b_gen, warp)?;

    // Backward chain: b -> (gen_ba, warp) -> a' -> (gen_ab, warp) -> b~.
    let m_bwd = nets::generator_momenta_on_tape(
        tape,
        &bound_ba,
        net,
        b_spec,
        b_f0,
        Some(&masks.ba_primary),
    )?;
    let a_gen = warp_on_tape(tape, m_bwd, b_f0, warp)?;
    let z_bwd = nets::discriminator_logit_on_tape(tape, &bound_disc, net, a_gen, b_f0)?;
    let m_bwd_cycle = nets::generator_momenta_on_tape(
        tape,
        &bound_ab,
        net,
        b_spec,
        a_gen,
        masks.ab_cycle.as_ref(),
    )?;
    let b_rec = warp_on_tape(tape, m_bwd_cycle, a_gen, warp)?;

    // Objectives. log D via log(sigmoid(z)); log(1 - D) via
    // log(sigmoid(-z)), the numerically exact complement.
    let cyc_ab = losses::cycle_term(tape, a_f0, a_rec)?;
    let sm_ab = losses::smoothness_term(tape, m_fwd)?;
    let s_fwd = tape.sigmoid(z_fwd)?;
    let adv_ab = tape.log(s_fwd)?;
    let total_ab = losses::generator_total_term(tape, cyc_ab, sm_ab, adv_ab, weights)?;

    let cyc_ba = losses::cycle_term(tape, b_f0, b_rec)?;
    let sm_ba = losses::smoothness_term(tape, m_bwd)?;
    let neg_z_bwd = tape.scale_const(-1.0, z_bwd)?;
    let s_bwd_comp = tape.sigmoid(neg_z_bwd)?;
    let adv_ba = tape.log(s_bwd_comp)?;
    let total_ba = losses::generator_total_term(tape, cyc_ba, sm_ba, adv_ba, weights)?;

    let loss = tape.add(total_ab, total_ba)?;

    let breakdown_ab = LossBreakdown {
        cycle: tape.value(cyc_ab).item(),
        momenta_smoothness: tape.value(sm_ab).item(),
        adversarial: tape.value(adv_ab).item(),
        total: tape.value(total_ab).item(),
    };
    let breakdown_ba = LossBreakdown {
        cycle: tape.value(cyc_ba).item(),
        momenta_smoothness: tape.value(sm_ba).item(),
        adversarial: tape.value(adv_ba).item(),
        total: tape.value(total_ba).item(),
    };
    let score_fwd = tape.value(s_fwd).item();
    let score_bwd = nets::sigmoid_scalar(tape.value(z_bwd).item());

    Ok(GeneratorObjective {
        loss,
        ids_ab: bound_ab.ids().to_vec(),
        ids_ba: bound_ba.ids().to_vec(),
        ids_disc: bound_disc.ids().to_vec(),
        breakdown_ab,
        breakdown_ba,
        score_fwd,
        score_bwd,
        converted_ab: b_gen,
    })
}

/// Result of building the discriminator objective on a tape.
pub struct DiscriminatorObjective {
    pub loss: ValueId,
    pub loss_value: f64,
    pub ids_disc: Vec<ValueId>,
    pub score_fwd: f64,
    pub score_bwd: f64,
}

/// Record both primary conversions and the discriminator loss
/// -log D(a, b') - log(1 - D(a', b)) for one pair.
#[allow(clippy::too_many_arguments)]
pub fn build_discriminator_objective(
    tape: &mut Tape,
    gen_ab: &ParameterSet,
    gen_ba: &ParameterSet,
    disc: &ParameterSet,
    net: &NetConfig,
    warp: &WarpConfig,
    a: &TrainUtterance,
    b: &TrainUtterance,
    masks: &PairMasks,
) -> Result<DiscriminatorObjective, TrainError> {
    let bound_ab = BoundParams::bind(tape, gen_ab);
    let bound_ba = BoundParams::bind(tape, gen_ba);
    let bound_disc = BoundParams::bind(tape, disc);

    let a_f0 = tape.leaf(Tensor::vector(a.contour.values().to_vec()));
    let a_spec = tape.leaf(a.spectrum_std.clone());
    let b_f0 = tape.leaf(Tensor::vector(b.contour.values().to_vec()));
    let b_spec = tape.leaf(b.spectrum_std.clone());

    let m_fwd = nets::generator_momenta_on_tape(
        tape,
        &bound_ab,
        net,
        a_spec,
        a_f0,
        Some(&masks.ab_primary),
    )?;
    let b_gen = warp_on_tape(tape, m_fwd, a_f0, warp)?;
    let z_fwd = nets::discriminator_logit_on_tape(tape, &bound_disc, net, a_f0, b_gen)?;

    let m_bwd = nets::generator_momenta_on_tape(
        tape,
        &bound_ba,
        net,
        b_spec,
        b_f0,
        Some(&masks.ba_primary),
    )?;
    let a_gen = warp_on_tape(tape, m_bwd, b_f0, warp)?;
    let z_bwd = nets::discriminator_logit_on_tape(tape, &bound_disc, net, a_gen, b_f0)?;

    // -(log sigmoid(z_fwd) + log sigmoid(-z_bwd))
    let s_fwd = tape.sigmoid(z_fwd)?;
    let log_fwd = tape.log(s_fwd)?;
    let neg_z_bwd = tape.scale_const(-1.0, z_bwd)?;
    let s_bwd_comp = tape.sigmoid(neg_z_bwd)?;
    let log_bwd = tape.log(s_bwd_comp)?;
    let sum = tape.add(log_fwd, log_bwd)?;
    let loss = tape.scale_const(-1.0, sum)?;

    Ok(DiscriminatorObjective {
        loss_value: tape.value(loss).item(),
        loss,
        ids_disc: bound_disc.ids().to_vec(),
        score_fwd: tape.value(s_fwd).item(),
        score_bwd: nets::sigmoid_scalar(tape.value(z_bwd).item()),
    })
}

/// Outcome of a full training run.
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub history: Vec<EpochSummary>,
    pub history_csv: PathBuf,
}

/// Load the corpus, run the configured number of epochs with periodic
/// checkpoints and a per-epoch loss CSV. `resume` continues from a
/// checkpoint, taking its config and ignoring `cfg`.
pub fn train(
    cfg: &TrainConfig,
    data_dir: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    let manifest = corpus::load_manifest(data_dir)?;
    let pair = manifest.emotion_pair()?;

    let mut trainer = match resume {
        Some(ckpt_path) => {
            let file = CheckpointFile::read(ckpt_path)?;
            Trainer::from_checkpoint(&file)?
        }
        None => {
            let bad = cfg.validate();
            if !bad.is_empty() {
                return Err(TrainError::Config(bad));
            }
            Trainer::new(cfg.clone(), pair.source(), pair.target(), manifest.stats())?
        }
    };
    let run_cfg = trainer.cfg.clone();

    // Fail on unwritable output before any training work.
    fs::create_dir_all(out_dir)?;
    let csv_path = out_dir.join("loss_history.csv");
    let mut csv = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&csv_path)?;
    if csv.metadata()?.len() == 0 {
        writeln!(csv, "{HISTORY_HEADER}")?;
    }

    let (side_a, side_b) = load_training_sides(data_dir, &manifest, &trainer)?;

    let mut history = Vec::new();
    let mut last_checkpoint: Option<PathBuf> = None;
    while trainer.epoch < run_cfg.epochs {
        let failed_epoch = trainer.epoch + 1;
        let summary = trainer
            .train_epoch(&side_a, &side_b)
            .map_err(|e| attach_checkpoint(e, failed_epoch, &last_checkpoint))?;
        if !trainer.all_params_finite() {
            return Err(TrainError::NonFinite {
                epoch: summary.epoch,
                detail: "parameters left the finite range".into(),
                last_checkpoint: last_checkpoint.clone(),
            });
        }
        writeln!(csv, "{}", summary.to_csv_row())?;
        csv.flush()?;
        history.push(summary);

        if trainer.epoch % run_cfg.checkpoint_every == 0 && trainer.epoch < run_cfg.epochs {
            let path = out_dir.join(format!("epoch_{:04}.vcgn", trainer.epoch));
            trainer.to_checkpoint().write(&path)?;
            last_checkpoint = Some(path);
        }
    }

    let final_path = out_dir.join("final.vcgn");
    trainer.to_checkpoint().write(&final_path)?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        history,
        history_csv: csv_path,
    })
}

fn attach_checkpoint(e: TrainError, epoch: u32, last: &Option<PathBuf>) -> TrainError {
    match e {
        TrainError::Tape(TapeError::NonFinite { op, step }) => TrainError::NonFinite {
            epoch,
            detail: format!("{op} produced a non-finite value at step {step}"),
            last_checkpoint: last.clone(),
        },
        TrainError::Optim { source, .. } => TrainError::NonFinite {
            epoch,
            detail: source.to_string(),
            last_checkpoint: last.clone(),
        },
        other => other,
    }
}

/// Load and preprocess both training sides.
pub fn load_training_sides(
    data_dir: &Path,
    manifest: &CorpusManifest,
    trainer: &Trainer,
) -> Result<(Vec<TrainUtterance>, Vec<TrainUtterance>), TrainError> {
    let utts = corpus::load_split(data_dir, manifest, Split::Train)?;
    let (a_raw, b_raw): (Vec<Utterance>, Vec<Utterance>) = utts
        .into_iter()
        .filter(|u| u.emotion == trainer.pair_source || u.emotion == trainer.pair_target)
        .partition(|u| u.emotion == trainer.pair_source);
    let side_a = prepare_utterances(&a_raw, &trainer.stats, trainer.cfg.seed);
    let side_b = prepare_utterances(&b_raw, &trainer.stats, trainer.cfg.seed);
    if side_a.is_empty() {
        return Err(TrainError::EmptySide {
            emotion: trainer.pair_source.clone(),
        });
    }
    if side_b.is_empty() {
        return Err(TrainError::EmptySide {
            emotion: trainer.pair_target.clone(),
        });
    }
    Ok((side_a, side_b))
}
