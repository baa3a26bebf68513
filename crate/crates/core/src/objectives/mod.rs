//! Scalar training objectives: reconstruction, adversarial prior matching,
//! supervised alignment and the VAE and MMD baselines.

mod losses;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{AutodiffError, Recording, Tensor};
use crate::nets::{ModelParams, NetError};

pub use losses::{
    cosine_similarity, cosine_similarity_matrix, gan_discriminator_loss, gan_generator_loss,
    hinge_from_similarity, max_margin_hinge, mmd_loss, mse_alignment, recon_loss, squared_recon_loss,
    vae_kl_and_sample,
};

#[derive(Debug, thiserror::Error)]
pub enum ObjectiveError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{prior} prior samples for {encoded} encoded latents")]
    CountMismatch { prior: usize, encoded: usize },
    #[error("no supervised pairs in batch")]
    EmptyPairs,
    #[error("ranking loss needs at least 2 pairs, got {0}")]
    TooFewPairs(usize),
    #[error("MMD needs at least 2 samples per side, got {0}")]
    TooFewSamples(usize),
    #[error("cosine similarity of a zero vector")]
    ZeroNorm,
    #[error("pair index ({0}, {1}) out of range")]
    PairOutOfRange(usize, usize),
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconNorm {
    L1,
    L2,
}

/// Aggregation of the hinge terms over the negatives of one pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Psi {
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Supervision {
    Mse,
    MaxMargin,
}

/// How latents are pulled toward the prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    /// Jensen-Shannon via the shared discriminator.
    Adversarial,
    /// VAE baseline: KL of a diagonal Gaussian posterior.
    Kl,
    /// Image/text MMD baseline.
    Mmd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    #[serde(default = "LossWeights::default_margin")]
    pub margin: f64,
    #[serde(default = "LossWeights::default_psi")]
    pub psi: Psi,
    #[serde(default = "LossWeights::default_norm")]
    pub recon_norm: ReconNorm,
    pub supervision: Supervision,
    pub regularizer: Regularizer,
    #[serde(default = "LossWeights::default_bandwidths")]
    pub mmd_bandwidths: Vec<f64>,
}

impl LossWeights {
    fn default_margin() -> f64 {
        0.2
    }
    fn default_psi() -> Psi {
        Psi::Max
    }
    fn default_norm() -> ReconNorm {
        ReconNorm::L2
    }
    fn default_bandwidths() -> Vec<f64> {
        vec![0.5, 1.0, 2.0, 4.0]
    }

    pub fn preset(objective: Objective) -> Self {
        let base = |l1, l2, l3, supervision, regularizer| LossWeights {
            lambda1: l1,
            lambda2: l2,
            lambda3: l3,
            lambda4: l3,
            margin: Self::default_margin(),
            psi: Self::default_psi(),
            recon_norm: Self::default_norm(),
            supervision,
            regularizer,
            mmd_bandwidths: Self::default_bandwidths(),
        };
        use Regularizer as R;
        use Supervision as S;
        match objective {
            Objective::JwaeMse => base(1.0, 1.0, 0.2, S::Mse, R::Adversarial),
            Objective::JwaeMh => base(0.5, 0.005, 0.01, S::MaxMargin, R::Adversarial),
            Objective::Mse => base(1.0, 1.0, 0.0, S::Mse, R::None),
            Objective::Mh => base(0.0, 0.0, 0.0, S::MaxMargin, R::None),
            Objective::VaeMh => base(0.5, 0.005, 0.01, S::MaxMargin, R::Kl),
            Objective::MmdMse => base(1.0, 1.0, 1.0, S::Mse, R::Mmd),
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(ObjectiveError::InvalidWeights(format!("lambdas must be finite and >= 0: {lambdas:?}")));
        }
        if !(self.margin >= 0.0) || !self.margin.is_finite() {
            return Err(ObjectiveError::InvalidWeights(format!("margin {} < 0", self.margin)));
        }
        if self.regularizer == Regularizer::Mmd
            && (self.mmd_bandwidths.is_empty() || self.mmd_bandwidths.iter().any(|b| !(*b > 0.0)))
        {
            return Err(ObjectiveError::InvalidWeights(format!(
                "MMD bandwidths must be positive: {:?}",
                self.mmd_bandwidths
            )));
        }
        Ok(())
    }

    /// Whether a training step needs the discriminator phase.
    pub fn uses_discriminator(&self) -> bool {
        self.regularizer == Regularizer::Adversarial && (self.lambda3 > 0.0 || self.lambda4 > 0.0)
    }
}

/// Named training objectives: the two jWAE variants and the baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Objective {
    #[serde(rename = "jwae-mse")]
    JwaeMse,
    #[serde(rename = "jwae-mh")]
    JwaeMh,
    /// Autoencoders aligned by MSE, no prior term.
    #[serde(rename = "mse")]
    Mse,
    /// Ranking loss alone.
    #[serde(rename = "mh")]
    Mh,
    #[serde(rename = "vae-mh")]
    VaeMh,
    #[serde(rename = "mmd-mse")]
    MmdMse,
}

impl Objective {
    pub const ALL: [Objective; 6] = [
        Objective::JwaeMse,
        Objective::JwaeMh,
        Objective::Mse,
        Objective::Mh,
        Objective::VaeMh,
        Objective::MmdMse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Objective::JwaeMse => "jwae-mse",
            Objective::JwaeMh => "jwae-mh",
            Objective::Mse => "mse",
            Objective::Mh => "mh",
            Objective::VaeMh => "vae-mh",
            Objective::MmdMse => "mmd-mse",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| ObjectiveError::InvalidWeights(format!("unknown objective `{s}`")))
    }
}

/// Encoded image and text latents of one batch plus the supervised pairs
/// among their rows.
#[derive(Clone, Debug)]
pub struct LatentBatchPair {
    pub v_latents: Tensor,
    pub t_latents: Tensor,
    pub paired_index: Vec<(usize, usize)>,
}

impl LatentBatchPair {
    pub fn new(v_latents: Tensor, t_latents: Tensor, paired_index: Vec<(usize, usize)>) -> Result<Self, ObjectiveError> {
        if v_latents.rank() != 2 || t_latents.rank() != 2 || v_latents.cols() != t_latents.cols() {
            return Err(ObjectiveError::ShapeMismatch(format!(
                "latents {:?} and {:?}",
                v_latents.shape(),
                t_latents.shape()
            )));
        }
        if let Some(&(v, t)) = paired_index
            .iter()
            .find(|&&(v, t)| v >= v_latents.rows() || t >= t_latents.rows())
        {
            return Err(ObjectiveError::PairOutOfRange(v, t));
        }
        Ok(Self {
            v_latents,
            t_latents,
            paired_index,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.v_latents.cols()
    }
}

/// Text reconstruction as the batch forward produced it.
#[derive(Clone, Debug)]
pub enum TextReconstruction {
    Features { inputs: Tensor, outputs: Tensor },
    /// Sentence NLL already averaged over the batch.
    SentenceNll(Tensor),
}

/// Everything a training step computes before the losses are combined.
#[derive(Clone, Debug)]
pub struct BatchForward {
    pub image_inputs: Tensor,
    pub image_outputs: Tensor,
    pub text: TextReconstruction,
    /// Latents used by the supervised and prior terms (posterior samples
    /// under the KL regularizer).
    pub encoded: LatentBatchPair,
    /// KL terms of the image and text posteriors.
    pub kl: Option<(Tensor, Tensor)>,
}

/// Unweighted values of every term, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub recon_v: f64,
    pub recon_t: f64,
    pub reg_v: f64,
    pub reg_t: f64,
    pub supervised: f64,
    pub generator: f64,
    pub discriminator: f64,
}

impl LossTerms {
    pub const NAMES: [&'static str; 7] = [
        "recon_v",
        "recon_t",
        "reg_v",
        "reg_t",
        "supervised",
        "generator",
        "discriminator",
    ];

    pub fn values(&self) -> [f64; 7] {
        [
            self.recon_v,
            self.recon_t,
            self.reg_v,
            self.reg_t,
            self.supervised,
            self.generator,
            self.discriminator,
        ]
    }
}

pub struct TotalLoss {
    pub generator: Tensor,
    pub discriminator: Option<Tensor>,
    pub terms: LossTerms,
}

fn weighted(rec: &mut Recording, acc: Option<Tensor>, term: &Tensor, w: f64) -> Result<Option<Tensor>, ObjectiveError> {
    let t = rec.scale(term, w)?;
    Ok(Some(match acc {
        Some(a) => rec.add(&a, &t)?,
        None => t,
    }))
}

/// Generator-side loss: `λ1 recon_v + λ2 recon_t + λ3 reg_v + λ4 reg_t +
/// supervised`. Terms whose weight is zero are skipped. When `prior_samples`
/// is given the discriminator-side loss is computed too (on detached
/// latents).
pub fn jwae_total_loss(
    rec: &mut Recording,
    fwd: &BatchForward,
    weights: &LossWeights,
    disc_params: &ModelParams,
    prior_samples: Option<&Tensor>,
) -> Result<TotalLoss, ObjectiveError> {
    weights.validate()?;
    let mut terms = LossTerms::default();
    let mut acc: Option<Tensor> = None;

    if weights.lambda1 > 0.0 {
        let l = recon_loss(rec, &fwd.image_inputs, &fwd.image_outputs, weights.recon_norm)?;
        terms.recon_v = l.item();
        acc = weighted(rec, acc, &l, weights.lambda1)?;
    }
    if weights.lambda2 > 0.0 {
        let l = match &fwd.text {
            TextReconstruction::Features { inputs, outputs } => squared_recon_loss(rec, inputs, outputs)?,
            TextReconstruction::SentenceNll(nll) => nll.clone(),
        };
        terms.recon_t = l.item();
        acc = weighted(rec, acc, &l, weights.lambda2)?;
    }

    let (w3, w4) = (weights.lambda3, weights.lambda4);
    match weights.regularizer {
        Regularizer::None => {}
        Regularizer::Adversarial => {
            if w3 > 0.0 || w4 > 0.0 {
                let (jv, jt) = gan_generator_loss(rec, &fwd.encoded, disc_params)?;
                terms.reg_v = jv.item();
                terms.reg_t = jt.item();
                if w3 > 0.0 {
                    acc = weighted(rec, acc, &jv, w3)?;
                }
                if w4 > 0.0 {
                    acc = weighted(rec, acc, &jt, w4)?;
                }
            }
        }
        Regularizer::Kl => {
            let (kv, kt) = fwd
                .kl
                .as_ref()
                .ok_or_else(|| ObjectiveError::InvalidWeights("KL regularizer without a variational forward".into()))?;
            terms.reg_v = kv.item();
            terms.reg_t = kt.item();
            if w3 > 0.0 {
                acc = weighted(rec, acc, kv, w3)?;
            }
            if w4 > 0.0 {
                acc = weighted(rec, acc, kt, w4)?;
            }
        }
        Regularizer::Mmd => {
            if w3 > 0.0 {
                let l = mmd_loss(rec, &fwd.encoded.v_latents, &fwd.encoded.t_latents, &weights.mmd_bandwidths)?;
                terms.reg_v = l.item();
                acc = weighted(rec, acc, &l, w3)?;
            }
        }
    }

    let sup = match weights.supervision {
        Supervision::Mse => mse_alignment(rec, &fwd.encoded)?,
        Supervision::MaxMargin => max_margin_hinge(rec, &fwd.encoded, weights.margin, weights.psi)?,
    };
    terms.supervised = sup.item();
    acc = weighted(rec, acc, &sup, 1.0)?;
    let generator = acc.expect("supervised term always present");
    terms.generator = generator.item();

    let discriminator = match prior_samples {
        Some(prior) => {
            let d = gan_discriminator_loss(rec, prior, &fwd.encoded, disc_params)?;
            terms.discriminator = d.item();
            Some(d)
        }
        None => None,
    };
    Ok(TotalLoss {
        generator,
        discriminator,
        terms,
    })
}
