//! TOML dataset manifests.
//!
//! ```toml
//! payload = "features"          # or "tokens"
//! image_features = "images.jwf1"
//! image_dim = 48
//! text_features = "texts.jwf1"  # features payload
//! text_dim = 32
//! text_corpus = "texts.txt"     # tokens payload, one sentence per line
//! five_caption = false
//! pairs = [[0, 0], [1, 1]]
//!
//! [images]
//! train = [0]
//! test = [1]
//!
//! [texts]
//! train = [0]
//! test = [1]
//! ```
//!
//! Paths are relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::format::{read_features, write_features};
use super::vocab::{build_vocab, EOS_ID};
use super::{DataError, Dataset, Split, TextPayload};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PayloadKind {
    Features,
    Tokens,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitLists {
    #[serde(default)]
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
}

impl SplitLists {
    fn from_labels(labels: &[Split]) -> Self {
        let mut s = SplitLists::default();
        for (i, split) in labels.iter().enumerate() {
            match split {
                Split::Train => s.train.push(i),
                Split::Val => s.val.push(i),
                Split::Test => s.test.push(i),
            }
        }
        s
    }

    fn to_labels(&self, n: usize, what: &str, path: &Path) -> Result<Vec<Split>, DataError> {
        let mut labels = vec![None; n];
        for (split, ids) in [(Split::Train, &self.train), (Split::Val, &self.val), (Split::Test, &self.test)] {
            for &i in ids {
                let slot = labels.get_mut(i).ok_or_else(|| DataError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("{what} id {i} out of range ({n} items)"),
                })?;
                if slot.replace(split).is_some() {
                    return Err(DataError::Manifest {
                        path: path.to_path_buf(),
                        message: format!("{what} id {i} assigned to more than one split"),
                    });
                }
            }
        }
        labels
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| DataError::Manifest {
                    path: path.to_path_buf(),
                    message: format!("{what} id {i} has no split"),
                })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub payload: PayloadKind,
    pub image_features: PathBuf,
    pub image_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_features: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_corpus: Option<PathBuf>,
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub five_caption: bool,
    pub pairs: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_labels: Option<Vec<u32>>,
    pub images: SplitLists,
    pub texts: SplitLists,
}

fn default_min_count() -> usize {
    1
}

fn manifest_err(path: &Path, message: impl Into<String>) -> DataError {
    DataError::Manifest {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| manifest_err(path, e.to_string()))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let image_path = base.join(&manifest.image_features);
    let image_features = read_features(&image_path)?;
    if image_features.cols() != manifest.image_dim {
        return Err(DataError::DimensionMismatch {
            path: image_path,
            what: "image_dim",
            manifest: manifest.image_dim,
            file: image_features.cols(),
        });
    }

    let (text, vocab) = match manifest.payload {
        PayloadKind::Features => {
            let rel = manifest
                .text_features
                .as_ref()
                .ok_or_else(|| manifest_err(path, "features payload needs `text_features`"))?;
            let text_path = base.join(rel);
            let m = read_features(&text_path)?;
            let dim = manifest
                .text_dim
                .ok_or_else(|| manifest_err(path, "features payload needs `text_dim`"))?;
            if m.cols() != dim {
                return Err(DataError::DimensionMismatch {
                    path: text_path,
                    what: "text_dim",
                    manifest: dim,
                    file: m.cols(),
                });
            }
            (TextPayload::Features(m), None)
        }
        PayloadKind::Tokens => {
            let rel = manifest
                .text_corpus
                .as_ref()
                .ok_or_else(|| manifest_err(path, "tokens payload needs `text_corpus`"))?;
            let corpus_path = base.join(rel);
            let corpus = fs::read_to_string(&corpus_path).map_err(|source| DataError::Io {
                path: corpus_path.clone(),
                source,
            })?;
            let lines: Vec<&str> = corpus.lines().collect();
            let split = manifest.texts.to_labels(lines.len(), "text", path)?;
            let train: Vec<&str> = lines
                .iter()
                .zip(&split)
                .filter(|(_, s)| **s == Split::Train)
                .map(|(l, _)| *l)
                .collect();
            let vocab = build_vocab(if train.is_empty() { &lines } else { &train }, manifest.min_count)?;
            let seqs = lines.iter().map(|l| vocab.encode(l)).collect();
            (TextPayload::Tokens(seqs), Some(vocab))
        }
    };

    let image_split = manifest.images.to_labels(image_features.rows(), "image", path)?;
    let text_split = manifest.texts.to_labels(text.len(), "text", path)?;
    let pairs = manifest.pairs.iter().map(|p| (p[0], p[1])).collect();
    let dataset = Dataset {
        image_features,
        text,
        pairs,
        image_split,
        text_split,
        five_caption: manifest.five_caption,
        image_labels: manifest.image_labels,
        text_labels: manifest.text_labels,
        vocab,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Writes `manifest.toml` plus feature/corpus files into `dir` and returns
/// the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf, DataError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    write_features(&dir.join("images.jwf1"), &dataset.image_features)?;
    let mut manifest = Manifest {
        payload: PayloadKind::Features,
        image_features: "images.jwf1".into(),
        image_dim: dataset.image_dim(),
        text_features: None,
        text_dim: None,
        text_corpus: None,
        min_count: 1,
        five_caption: dataset.five_caption,
        pairs: dataset.pairs.iter().map(|&(i, t)| [i, t]).collect(),
        image_labels: dataset.image_labels.clone(),
        text_labels: dataset.text_labels.clone(),
        images: SplitLists::from_labels(&dataset.image_split),
        texts: SplitLists::from_labels(&dataset.text_split),
    };
    match &dataset.text {
        TextPayload::Features(m) => {
            write_features(&dir.join("texts.jwf1"), m)?;
            manifest.text_features = Some("texts.jwf1".into());
            manifest.text_dim = Some(m.cols());
        }
        TextPayload::Tokens(seqs) => {
            let vocab = dataset
                .vocab
                .as_ref()
                .ok_or_else(|| DataError::Invalid("token payload without vocabulary".into()))?;
            let mut corpus = String::new();
            for s in seqs {
                let words: Vec<&str> = s
                    .iter()
                    .filter(|&&t| t != EOS_ID)
                    .map(|&t| vocab.token(t).unwrap_or("<unk>"))
                    .collect();
                corpus.push_str(&words.join(" "));
                corpus.push('\n');
            }
            let corpus_path = dir.join("texts.txt");
            fs::write(&corpus_path, corpus).map_err(io(&corpus_path))?;
            manifest.payload = PayloadKind::Tokens;
            manifest.text_corpus = Some("texts.txt".into());
        }
    }
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| manifest_err(&path, e.to_string()))?;
    fs::write(&path, text).map_err(io(&path))?;
    Ok(path)
}
