//! Cross-modal retrieval, phrase localization and latent diagnostics.

mod diagnostics;
mod encode;
mod localization;
mod retrieval;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::nets::NetError;

pub use diagnostics::{
    diagnose_latents, latent_diagnostics, projection_table, LatentDiagnostics, LatentSample, ModalityMoments,
    ProjectionRow,
};
pub use encode::{embed_images, embed_texts};
pub use localization::{
    iou, load_localization, localization_recall, phrase_localization_eval, positive_proposals, BoundingBox,
    BoxProposal, LocalizationInstance, LocalizationManifest, Phrase, LOCALIZATION_IOU, POSITIVE_IOU,
};
pub use retrieval::{
    cross_dataset_eval, cross_modal_eval, recall_at_k, retrieval_table, RetrievalReport, DEFAULT_KS,
};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty gallery")]
    EmptyGallery,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("{which} latent {index} has zero norm")]
    ZeroNorm { which: &'static str, index: usize },
    #[error("query {0} has no ground truth")]
    EmptyGroundTruth(usize),
    #[error("ground truth index {index} outside gallery of {gallery}")]
    GroundTruthOutOfRange { index: usize, gallery: usize },
    #[error("{queries} queries but {truth} ground-truth sets")]
    GroundTruthCount { queries: usize, truth: usize },
    #[error("latent widths differ: {0} vs {1}")]
    WidthMismatch(usize, usize),
    #[error("{what}: model expects {expected}, dataset has {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("unknown direction `{0}` (expected i2t or t2i)")]
    UnknownDirection(String),
    #[error("invalid K list: {0}")]
    InvalidK(String),
    #[error("degenerate box ({0}, {1}, {2}, {3})")]
    DegenerateBox(f64, f64, f64, f64),
    #[error("phrase {0} has no proposals")]
    NoProposals(usize),
    #[error("text payload does not match the text encoder: {0}")]
    PayloadMismatch(String),
    #[error("malformed localization input {path}: {msg}")]
    Format { path: String, msg: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "i2t")]
    ImageToText,
    #[serde(rename = "t2i")]
    TextToImage,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::ImageToText => "i2t",
            Direction::TextToImage => "t2i",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Direction {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "i2t" => Ok(Direction::ImageToText),
            "t2i" => Ok(Direction::TextToImage),
            _ => Err(EvalError::UnknownDirection(s.to_string())),
        }
    }
}

pub(crate) fn check_ks(ks: &[usize]) -> Result<(), EvalError> {
    if ks.is_empty() {
        return Err(EvalError::InvalidK("no K values".into()));
    }
    if ks.contains(&0) {
        return Err(EvalError::InvalidK("K must be at least 1".into()));
    }
    Ok(())
}
