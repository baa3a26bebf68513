//! Datasets: feature matrices or token corpora plus the supervised pair set.

mod batch;
mod format;
mod manifest;
mod synth;
mod vocab;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

pub use batch::{make_batches, Batch, PairSubset};
pub use format::{read_features, write_features, FEATURE_MAGIC};
pub use manifest::{load_dataset, save_dataset, Manifest, PayloadKind, SplitLists};
pub use synth::{synth_generate, SynthConfig, SynthText};
pub use vocab::{build_vocab, tokenize, Vocabulary, EOS_ID, FIRST_WORD_ID, PAD_ID, SOS_ID, UNK_ID};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },
    #[error("{path}: truncated, expected {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: manifest says {what} is {manifest}, file header says {file}")]
    DimensionMismatch {
        path: PathBuf,
        what: &'static str,
        manifest: usize,
        file: usize,
    },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("pair ({image}, {text}) out of range for {n_images} images and {n_texts} texts")]
    PairOutOfRange {
        image: usize,
        text: usize,
        n_images: usize,
        n_texts: usize,
    },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("corpus is empty")]
    EmptyCorpus,
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, DataError> {
        if values.len() != rows * cols {
            return Err(DataError::Invalid(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DataError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DataError::Invalid("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            values: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut values = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            values.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            values,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.rows, self.cols, self.values.clone()).expect("non-empty matrix")
    }

    pub fn from_tensor(t: &Tensor) -> Matrix {
        Matrix {
            rows: t.rows(),
            cols: t.cols(),
            values: t.to_vec(),
        }
    }

    pub fn bit_eq(&self, other: &Matrix) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TextPayload {
    Features(Matrix),
    /// Word ids per sentence, terminated by [`EOS_ID`].
    Tokens(Vec<Vec<u32>>),
}

impl TextPayload {
    pub fn len(&self) -> usize {
        match self {
            TextPayload::Features(m) => m.rows(),
            TextPayload::Tokens(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub image_features: Matrix,
    pub text: TextPayload,
    /// Supervised pairs `(image index, text index)`.
    pub pairs: Vec<(usize, usize)>,
    pub image_split: Vec<Split>,
    pub text_split: Vec<Split>,
    pub five_caption: bool,
    /// Concept labels when the generator knows them.
    pub image_labels: Option<Vec<u32>>,
    pub text_labels: Option<Vec<u32>>,
    pub vocab: Option<Vocabulary>,
}

impl Dataset {
    pub fn n_images(&self) -> usize {
        self.image_features.rows()
    }

    pub fn n_texts(&self) -> usize {
        self.text.len()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let (ni, nt) = (self.n_images(), self.n_texts());
        if self.image_split.len() != ni || self.text_split.len() != nt {
            return Err(DataError::Invalid(format!(
                "split lists cover {} images and {} texts, dataset has {ni} and {nt}",
                self.image_split.len(),
                self.text_split.len()
            )));
        }
        for &(i, t) in &self.pairs {
            if i >= ni || t >= nt {
                return Err(DataError::PairOutOfRange {
                    image: i,
                    text: t,
                    n_images: ni,
                    n_texts: nt,
                });
            }
            if self.image_split[i] != self.text_split[t] {
                return Err(DataError::Invalid(format!(
                    "pair ({i}, {t}) crosses splits {:?}/{:?}",
                    self.image_split[i], self.text_split[t]
                )));
            }
        }
        let mut per_image = vec![0usize; ni];
        for &(i, _) in &self.pairs {
            per_image[i] += 1;
        }
        for i in 0..ni {
            if self.image_split[i] == Split::Test && per_image[i] == 0 {
                return Err(DataError::Invalid(format!("test image {i} has no caption")));
            }
            if self.five_caption && per_image[i] != 5 {
                return Err(DataError::Invalid(format!(
                    "five-caption dataset: image {i} has {} captions",
                    per_image[i]
                )));
            }
        }
        if let Some(l) = &self.image_labels {
            if l.len() != ni {
                return Err(DataError::Invalid("image label count".into()));
            }
        }
        if let Some(l) = &self.text_labels {
            if l.len() != nt {
                return Err(DataError::Invalid("text label count".into()));
            }
        }
        if let TextPayload::Tokens(seqs) = &self.text {
            let Some(vocab) = &self.vocab else {
                return Err(DataError::Invalid("token payload without vocabulary".into()));
            };
            for (j, s) in seqs.iter().enumerate() {
                if s.is_empty() || s.iter().any(|&t| t as usize >= vocab.len()) {
                    return Err(DataError::Invalid(format!("sentence {j} is empty or out of vocabulary")));
                }
            }
        }
        Ok(())
    }

    pub fn images_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_images()).filter(|&i| self.image_split[i] == split).collect()
    }

    pub fn texts_in(&self, split: Split) -> Vec<usize> {
        (0..self.n_texts()).filter(|&j| self.text_split[j] == split).collect()
    }

    pub fn pairs_in(&self, split: Split) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .copied()
            .filter(|&(i, _)| self.image_split[i] == split)
            .collect()
    }

    pub fn image_dim(&self) -> usize {
        self.image_features.cols()
    }

    /// Width of text features, or vocabulary size for token payloads.
    pub fn text_dim(&self) -> usize {
        match (&self.text, &self.vocab) {
            (TextPayload::Features(m), _) => m.cols(),
            (TextPayload::Tokens(_), Some(v)) => v.len(),
            (TextPayload::Tokens(_), None) => 0,
        }
    }
}
