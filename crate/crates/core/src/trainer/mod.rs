//! Adam training with alternating discriminator and encoder/decoder updates.

mod adam;
mod step;
mod supervision;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::data::{make_batches, DataError, Dataset, PairSubset, Split};
use crate::eval::{cross_modal_eval, EvalError, DEFAULT_KS};
use crate::nets::{init_params, ModelConfig, ModelParams, NetError};
use crate::objectives::{LossTerms, LossWeights, Objective, ObjectiveError, Regularizer, Supervision};

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use step::{forward_batch, train_step, TrainState};
pub use supervision::subsample_supervision;

/// Stream of the per-step noise (prior draws, reparameterization, word dropout).
const NOISE_STREAM: u64 = u64::MAX;

/// Global gradient-norm clip applied to the GRU text path unless configured.
pub const GRU_DEFAULT_CLIP: f64 = 5.0;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training split has no pairs")]
    EmptyTrainingSet,
    #[error("max-margin supervision needs at least 2 pairs per batch, got {0}")]
    TooFewPairs(usize),
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("gradient for `{name}` has shape {grad:?}, parameter {param:?}")]
    GradientShape { name: String, param: Vec<usize>, grad: Vec<usize> },
    #[error("generator loss became {0}")]
    Diverged(f64),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub weights: LossWeights,
    #[serde(default = "TrainConfig::default_lr_main")]
    pub lr_main: f64,
    #[serde(default = "TrainConfig::default_lr_disc")]
    pub lr_disc: f64,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "TrainConfig::default_disc_steps")]
    pub disc_steps_per_gen_step: usize,
    /// Global gradient-norm clip for the encoder/decoder update. Unset means
    /// none for feature text and [`GRU_DEFAULT_CLIP`] for the GRU path;
    /// `inf` disables clipping.
    #[serde(default)]
    pub grad_clip_norm: Option<f64>,
    #[serde(default = "TrainConfig::default_fraction")]
    pub supervision_fraction: f64,
    #[serde(default = "TrainConfig::default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "TrainConfig::default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "TrainConfig::default_eps")]
    pub adam_eps: f64,
}

impl TrainConfig {
    fn default_lr_main() -> f64 {
        1e-4
    }
    fn default_lr_disc() -> f64 {
        5e-5
    }
    fn default_batch_size() -> usize {
        64
    }
    fn default_epochs() -> usize {
        100
    }
    fn default_disc_steps() -> usize {
        1
    }
    fn default_fraction() -> f64 {
        1.0
    }
    fn default_beta1() -> f64 {
        0.9
    }
    fn default_beta2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }

    pub fn new(weights: LossWeights) -> Self {
        Self {
            weights,
            lr_main: Self::default_lr_main(),
            lr_disc: Self::default_lr_disc(),
            batch_size: Self::default_batch_size(),
            epochs: Self::default_epochs(),
            seed: 0,
            disc_steps_per_gen_step: Self::default_disc_steps(),
            grad_clip_norm: None,
            supervision_fraction: Self::default_fraction(),
            adam_beta1: Self::default_beta1(),
            adam_beta2: Self::default_beta2(),
            adam_eps: Self::default_eps(),
        }
    }

    pub fn for_objective(objective: Objective) -> Self {
        Self::new(LossWeights::preset(objective))
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        self.weights.validate()?;
        for (name, lr) in [("lr_main", self.lr_main), ("lr_disc", self.lr_disc)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.supervision_fraction > 0.0 && self.supervision_fraction <= 1.0) {
            return bad(format!(
                "supervision_fraction must lie in (0, 1], got {}",
                self.supervision_fraction
            ));
        }
        if self.disc_steps_per_gen_step == 0 {
            return bad("disc_steps_per_gen_step must be at least 1".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if c.is_nan() || c <= 0.0 {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }

    pub fn effective_clip(&self, model: &ModelConfig) -> Option<f64> {
        match self.grad_clip_norm {
            Some(c) if c.is_infinite() => None,
            Some(c) => Some(c),
            None if model.uses_gru() => Some(GRU_DEFAULT_CLIP),
            None => None,
        }
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

/// Validation Recall@{1,5,10}: image-to-text then text-to-image.
pub type ValidationRecalls = [f64; 6];

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Steps taken so far in the run.
    pub step: u64,
    /// Per-term means over the epoch's steps.
    pub terms: LossTerms,
    pub validation: Option<ValidationRecalls>,
}

impl EpochRecord {
    pub fn validation_sum(&self) -> Option<f64> {
        self.validation.map(|v| v.iter().sum())
    }

    pub fn tsv_line(&self) -> String {
        let mut s = format!("{}\t{}", self.epoch, self.step);
        for v in self.terms.values() {
            write!(s, "\t{v:.6e}").expect("write to string");
        }
        match self.validation {
            Some(r) => {
                for v in r {
                    write!(s, "\t{v:.4}").expect("write to string");
                }
                write!(s, "\t{:.4}", r.iter().sum::<f64>()).expect("write to string");
            }
            None => s.push_str(&"\t-".repeat(7)),
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn header() -> String {
        let mut h = String::from("epoch\tstep");
        for n in LossTerms::NAMES {
            write!(h, "\t{n}").expect("write to string");
        }
        h.push_str("\tval_i2t_r1\tval_i2t_r5\tval_i2t_r10\tval_t2i_r1\tval_t2i_r5\tval_t2i_r10\tval_rsum");
        h
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.tsv_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Parameters of the epoch with the best validation recall sum (the
    /// last epoch when there is no validation data).
    pub best: ModelParams,
    /// 1-based epoch of `best`, `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    pub last: ModelParams,
    pub log: TrainLog,
}

/// Training pairs after limited-supervision subsampling.
pub fn training_subset(dataset: &Dataset, config: &TrainConfig) -> Result<PairSubset, TrainError> {
    let full = PairSubset::for_split(dataset, Split::Train);
    subsample_supervision(&full, config.supervision_fraction, config.seed)
}

pub fn validation_recalls(
    params: &ModelParams,
    model: &ModelConfig,
    dataset: &Dataset,
) -> Result<Option<ValidationRecalls>, TrainError> {
    if dataset.pairs_in(Split::Val).is_empty() {
        return Ok(None);
    }
    let (i2t, t2i) = cross_modal_eval(params, model, dataset, Split::Val, &DEFAULT_KS)?;
    let mut out = [0.0; 6];
    out[..3].copy_from_slice(&i2t.recalls);
    out[3..].copy_from_slice(&t2i.recalls);
    Ok(Some(out))
}

pub fn fit(dataset: &Dataset, model: &ModelConfig, config: &TrainConfig) -> Result<FitResult, TrainError> {
    fit_with(dataset, model, config, |_| Ok(()))
}

/// [`fit`] calling `on_epoch` after every epoch, e.g. to append the log line.
pub fn fit_with(
    dataset: &Dataset,
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<(), TrainError>,
) -> Result<FitResult, TrainError> {
    config.validate()?;
    model.validate()?;
    dataset.validate()?;
    if model.variational != (config.weights.regularizer == Regularizer::Kl) {
        return Err(TrainError::InvalidConfig(
            "variational encoders go with the KL regularizer and only with it".into(),
        ));
    }
    let subset = training_subset(dataset, config)?;
    let min_pairs = match config.weights.supervision {
        Supervision::MaxMargin => 2,
        Supervision::Mse => 1,
    };
    if subset.retained.len() < min_pairs {
        return Err(TrainError::EmptyTrainingSet);
    }

    let init = init_params(model, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(NOISE_STREAM);
    let mut state = TrainState::new(init.clone(), rng);
    let mut log = TrainLog::default();
    let mut best = init;
    let mut best_epoch = None;
    let mut best_sum = f64::NEG_INFINITY;
    let mut steps = 0u64;

    for epoch in 0..config.epochs {
        let batches = make_batches(dataset, &subset, config.batch_size, config.seed, epoch as u64)?;
        let mut sums = [0.0; 7];
        for batch in &batches {
            let t = train_step(&mut state, model, config, dataset, batch)?;
            sums.iter_mut().zip(t.values()).for_each(|(s, v)| *s += v);
            steps += 1;
        }
        let n = batches.len().max(1) as f64;
        let m = sums.map(|s| s / n);
        let record = EpochRecord {
            epoch: epoch + 1,
            step: steps,
            terms: LossTerms {
                recon_v: m[0],
                recon_t: m[1],
                reg_v: m[2],
                reg_t: m[3],
                supervised: m[4],
                generator: m[5],
                discriminator: m[6],
            },
            validation: validation_recalls(&state.params, model, dataset)?,
        };
        let score = record.validation_sum().unwrap_or(0.0);
        if record.validation.is_none() || score > best_sum {
            best_sum = score;
            best = state.params.clone();
            best_epoch = Some(epoch + 1);
        }
        on_epoch(&record)?;
        log.records.push(record);
    }
    Ok(FitResult {
        best,
        best_epoch,
        last: state.params,
        log,
    })
}
