use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{check_ks, embed_images, embed_texts, EvalError};
use crate::data::{read_features, Matrix, TextPayload};
use crate::nets::{ModelConfig, ModelParams};

/// Minimum overlap for a top-K proposal to localize a phrase.
pub const LOCALIZATION_IOU: f64 = 0.5;
/// Minimum overlap for a proposal to be a training positive of a phrase.
pub const POSITIVE_IOU: f64 = 0.7;

/// Axis-aligned box in pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, EvalError> {
        let b = Self { x_min, y_min, x_max, y_max };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), EvalError> {
        let ok = [self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
            && self.x_max > self.x_min
            && self.y_max > self.y_min;
        if ok {
            Ok(())
        } else {
            Err(EvalError::DegenerateBox(self.x_min, self.y_min, self.x_max, self.y_max))
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoxProposal {
    pub image_id: usize,
    pub bbox: BoundingBox,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phrase {
    pub image_id: usize,
    pub gt_box: BoundingBox,
}

/// Phrases with their text payload (row `i` belongs to `phrases[i]`) and
/// every proposal of the referenced images.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalizationInstance {
    pub phrases: Vec<Phrase>,
    pub phrase_text: TextPayload,
    pub proposals: Vec<BoxProposal>,
}

/// Intersection over union.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> Result<f64, EvalError> {
    a.check()?;
    b.check()?;
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    Ok(inter / (a.area() + b.area() - inter))
}

/// Proposals overlapping `gt` by at least [`POSITIVE_IOU`].
pub fn positive_proposals(boxes: &[BoundingBox], gt: &BoundingBox) -> Result<Vec<usize>, EvalError> {
    let mut out = Vec::new();
    for (i, b) in boxes.iter().enumerate() {
        if iou(b, gt)? >= POSITIVE_IOU {
            out.push(i);
        }
    }
    Ok(out)
}

fn unit(v: &[f64], which: &'static str, index: usize) -> Result<Vec<f64>, EvalError> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(EvalError::ZeroNorm { which, index });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Recall per K given phrase latents (row per phrase) and proposals whose
/// `feature` already holds the region latent. Proposals of an image are
/// ranked by cosine similarity, ties broken by their order in `proposals`.
pub fn localization_recall(
    phrase_latents: &Matrix,
    phrases: &[Phrase],
    proposals: &[BoxProposal],
    ks: &[usize],
) -> Result<Vec<f64>, EvalError> {
    check_ks(ks)?;
    if phrases.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if phrase_latents.rows() != phrases.len() {
        return Err(EvalError::GroundTruthCount {
            queries: phrase_latents.rows(),
            truth: phrases.len(),
        });
    }
    let mut by_image: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        if p.feature.len() != phrase_latents.cols() {
            return Err(EvalError::WidthMismatch(phrase_latents.cols(), p.feature.len()));
        }
        by_image.entry(p.image_id).or_default().push(i);
    }
    let mut hits = vec![0usize; ks.len()];
    for (pi, phrase) in phrases.iter().enumerate() {
        let cand = by_image
            .get(&phrase.image_id)
            .filter(|c| !c.is_empty())
            .ok_or(EvalError::NoProposals(pi))?;
        let q = unit(phrase_latents.row(pi), "phrase", pi)?;
        let mut scored = Vec::with_capacity(cand.len());
        for (rank_key, &c) in cand.iter().enumerate() {
            let r = unit(&proposals[c].feature, "proposal", c)?;
            let s: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            scored.push((s, rank_key, c));
        }
        scored.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .expect("similarities of finite unit vectors")
                .then(a.1.cmp(&b.1))
        });
        let mut first_hit = None;
        for (rank, &(_, _, c)) in scored.iter().enumerate() {
            if iou(&proposals[c].bbox, &phrase.gt_box)? >= LOCALIZATION_IOU {
                first_hit = Some(rank);
                break;
            }
        }
        if let Some(rank) = first_hit {
            for (h, &k) in hits.iter_mut().zip(ks) {
                if rank < k {
                    *h += 1;
                }
            }
        }
    }
    Ok(hits.iter().map(|&h| h as f64 / phrases.len() as f64).collect())
}

/// Encodes phrases with the text pipeline and proposal features with the
/// image pipeline, then scores as [`localization_recall`].
pub fn phrase_localization_eval(
    params: &ModelParams,
    model: &ModelConfig,
    instance: &LocalizationInstance,
    ks: &[usize],
) -> Result<Vec<f64>, EvalError> {
    let n = instance.phrases.len();
    let all: Vec<usize> = (0..n).collect();
    if instance.phrase_text.len() != n {
        return Err(EvalError::GroundTruthCount {
            queries: instance.phrase_text.len(),
            truth: n,
        });
    }
    let zp = embed_texts(params, model, &instance.phrase_text, &all)?;
    let rows: Vec<Vec<f64>> = instance.proposals.iter().map(|p| p.feature.clone()).collect();
    let feats = if rows.is_empty() {
        Matrix::new(0, model.image.input_dim, Vec::new())?
    } else {
        Matrix::from_rows(&rows)?
    };
    let idx: Vec<usize> = (0..rows.len()).collect();
    let zr = embed_images(params, model, &feats, &idx)?;
    let encoded: Vec<BoxProposal> = instance
        .proposals
        .iter()
        .enumerate()
        .map(|(i, p)| BoxProposal {
            image_id: p.image_id,
            bbox: p.bbox,
            feature: zr.row(i).to_vec(),
        })
        .collect();
    localization_recall(&zp, &instance.phrases, &encoded, ks)
}

/// On-disk description of a localization benchmark. Paths are relative to
/// the manifest. Box tables hold one row per box: image id, x_min, y_min,
/// x_max, y_max, whitespace or tab separated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalizationManifest {
    /// Text features, one row per phrase.
    pub phrase_features: PathBuf,
    /// Ground-truth box per phrase.
    pub phrases: PathBuf,
    /// Every proposal box.
    pub proposals: PathBuf,
    /// Per image id, the proposal features in box-table order.
    pub proposal_features: BTreeMap<String, PathBuf>,
}

fn read_text(path: &Path) -> Result<String, EvalError> {
    fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_boxes(path: &Path) -> Result<Vec<(usize, BoundingBox)>, EvalError> {
    let fmt_err = |line: usize, msg: String| EvalError::Format {
        path: path.display().to_string(),
        msg: format!("line {line}: {msg}"),
    };
    let mut out = Vec::new();
    for (n, line) in read_text(path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if n == 0 && fields.first().is_some_and(|f| f.parse::<usize>().is_err()) {
            continue;
        }
        if fields.len() != 5 {
            return Err(fmt_err(n + 1, format!("expected 5 fields, found {}", fields.len())));
        }
        let id = fields[0]
            .parse::<usize>()
            .map_err(|e| fmt_err(n + 1, format!("image id: {e}")))?;
        let mut c = [0.0; 4];
        for (slot, f) in c.iter_mut().zip(&fields[1..]) {
            *slot = f.parse::<f64>().map_err(|e| fmt_err(n + 1, format!("coordinate: {e}")))?;
        }
        let b = BoundingBox::new(c[0], c[1], c[2], c[3]).map_err(|e| fmt_err(n + 1, e.to_string()))?;
        out.push((id, b));
    }
    Ok(out)
}

pub fn load_localization(manifest_path: &Path) -> Result<LocalizationInstance, EvalError> {
    let text = read_text(manifest_path)?;
    let manifest: LocalizationManifest = toml::from_str(&text).map_err(|e| EvalError::Format {
        path: manifest_path.display().to_string(),
        msg: e.to_string(),
    })?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let phrase_feats = read_features(&base.join(&manifest.phrase_features))?;
    let phrase_rows = read_boxes(&base.join(&manifest.phrases))?;
    if phrase_rows.len() != phrase_feats.rows() {
        return Err(EvalError::Format {
            path: manifest.phrases.display().to_string(),
            msg: format!("{} phrase boxes but {} phrase feature rows", phrase_rows.len(), phrase_feats.rows()),
        });
    }
    let phrases = phrase_rows
        .into_iter()
        .map(|(image_id, gt_box)| Phrase { image_id, gt_box })
        .collect();

    let boxes = read_boxes(&base.join(&manifest.proposals))?;
    let mut features = BTreeMap::new();
    for (id, p) in &manifest.proposal_features {
        let id: usize = id.parse().map_err(|_| EvalError::Format {
            path: manifest_path.display().to_string(),
            msg: format!("proposal_features key `{id}` is not an image id"),
        })?;
        features.insert(id, read_features(&base.join(p))?);
    }
    let mut cursor: BTreeMap<usize, usize> = BTreeMap::new();
    let mut proposals = Vec::with_capacity(boxes.len());
    for (image_id, bbox) in boxes {
        let m = features.get(&image_id).ok_or_else(|| EvalError::Format {
            path: manifest_path.display().to_string(),
            msg: format!("no proposal features for image {image_id}"),
        })?;
        let row = cursor.entry(image_id).or_insert(0);
        if *row >= m.rows() {
            return Err(EvalError::Format {
                path: manifest_path.display().to_string(),
                msg: format!("image {image_id} has more boxes than feature rows ({})", m.rows()),
            });
        }
        proposals.push(BoxProposal {
            image_id,
            bbox,
            feature: m.row(*row).to_vec(),
        });
        *row += 1;
    }
    for (id, m) in &features {
        let used = cursor.get(id).copied().unwrap_or(0);
        if used != m.rows() {
            return Err(EvalError::Format {
                path: manifest_path.display().to_string(),
                msg: format!("image {id}: {used} boxes but {} feature rows", m.rows()),
            });
        }
    }
    Ok(LocalizationInstance {
        phrases,
        phrase_text: TextPayload::Features(phrase_feats),
        proposals,
    })
}
