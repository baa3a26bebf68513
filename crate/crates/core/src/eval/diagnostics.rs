use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{embed_images, embed_texts, EvalError};
use crate::autodiff::Recording;
use crate::data::{Dataset, Matrix, Split};
use crate::nets::{discriminate, Modality, ModelConfig, ModelParams, PRIOR_CLASS};

/// Componentwise moments of one set of latents.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModalityMoments {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance per dimension.
    pub variance: Vec<f64>,
    /// Largest absolute off-diagonal covariance entry.
    pub max_abs_offdiag_cov: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProjectionRow {
    pub item: usize,
    pub modality: Modality,
    pub label: Option<u32>,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatentDiagnostics {
    pub image: ModalityMoments,
    pub text: ModalityMoments,
    pub pooled: ModalityMoments,
    /// Fraction of fresh prior draws the discriminator calls prior.
    pub prior_accuracy: f64,
    /// Fraction of encoded latents it calls encoded.
    pub encoded_accuracy: f64,
    pub disc_balanced_accuracy: f64,
    #[serde(skip)]
    pub projection: Vec<ProjectionRow>,
}

fn covariance(rows: &[&[f64]], d: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(*r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(d, d);
    for r in rows {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (r[j] - mean[j]);
            }
        }
    }
    (mean, cov / n)
}

fn moments(rows: &[&[f64]], d: usize) -> ModalityMoments {
    if rows.is_empty() {
        return ModalityMoments {
            count: 0,
            mean: vec![f64::NAN; d],
            variance: vec![f64::NAN; d],
            max_abs_offdiag_cov: f64::NAN,
        };
    }
    let (mean, cov) = covariance(rows, d);
    let mut off = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            if i != j {
                off = off.max(cov[(i, j)].abs());
            }
        }
    }
    ModalityMoments {
        count: rows.len(),
        mean,
        variance: (0..d).map(|i| cov[(i, i)]).collect(),
        max_abs_offdiag_cov: off,
    }
}

/// Fraction of rows called prior (`want_prior`) or encoded. Ties count as encoded.
fn disc_rate(latents: &Matrix, disc: &ModelParams, want_prior: bool) -> Result<f64, EvalError> {
    if latents.rows() == 0 {
        return Ok(f64::NAN);
    }
    let mut rec = Recording::inactive();
    let mut hits = 0usize;
    for start in (0..latents.rows()).step_by(1024) {
        let idx: Vec<usize> = (start..latents.rows().min(start + 1024)).collect();
        let logits = discriminate(&mut rec, &latents.select_rows(&idx).to_tensor(), disc)?;
        for r in 0..logits.rows() {
            let says_prior = logits.get2(r, PRIOR_CLASS) > logits.get2(r, 1 - PRIOR_CLASS);
            if says_prior == want_prior {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / latents.rows() as f64)
}

/// Top two principal directions of the rows, each signed so its largest
/// component is positive. Missing directions are zero.
fn principal_axes(rows: &[&[f64]], d: usize) -> (Vec<f64>, [Vec<f64>; 2]) {
    let (mean, cov) = covariance(rows, d);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| -> Vec<f64> {
        let Some(&c) = order.get(k) else { return vec![0.0; d] };
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    (mean, [axis(0), axis(1)])
}

/// One modality's latents with their dataset ids and optional labels.
pub struct LatentSample<'a> {
    pub latents: &'a Matrix,
    pub items: &'a [usize],
    pub labels: Option<&'a [u32]>,
}

/// Moments, discriminator balance against `N_v + N_t` fresh prior draws
/// and the pooled 2-D principal projection.
pub fn diagnose_latents(
    image: LatentSample<'_>,
    text: LatentSample<'_>,
    disc: &ModelParams,
    seed: u64,
) -> Result<LatentDiagnostics, EvalError> {
    let d = image.latents.cols();
    if text.latents.cols() != d {
        return Err(EvalError::WidthMismatch(d, text.latents.cols()));
    }
    for s in [&image, &text] {
        let rows = s.latents.rows();
        if s.items.len() != rows || s.labels.is_some_and(|l| l.len() != rows) {
            return Err(EvalError::GroundTruthCount {
                queries: rows,
                truth: s.items.len(),
            });
        }
    }
    let n = image.latents.rows() + text.latents.rows();
    if n == 0 {
        return Err(EvalError::EmptyDataset);
    }
    let v_rows: Vec<&[f64]> = (0..image.latents.rows()).map(|i| image.latents.row(i)).collect();
    let t_rows: Vec<&[f64]> = (0..text.latents.rows()).map(|i| text.latents.row(i)).collect();
    let pooled_rows: Vec<&[f64]> = v_rows.iter().chain(&t_rows).copied().collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let prior = Matrix::new(n, d, prior)?;
    let pooled = Matrix::from_rows(&pooled_rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    let prior_accuracy = disc_rate(&prior, disc, true)?;
    let encoded_accuracy = disc_rate(&pooled, disc, false)?;

    let (mean, [a, b]) = principal_axes(&pooled_rows, d);
    let project = |r: &[f64], axis: &[f64]| r.iter().zip(&mean).zip(axis).map(|((x, m), w)| (x - m) * w).sum::<f64>();
    let mut projection = Vec::with_capacity(n);
    for (sample, modality) in [(&image, Modality::Image), (&text, Modality::Text)] {
        for (k, &item) in sample.items.iter().enumerate() {
            let r = sample.latents.row(k);
            projection.push(ProjectionRow {
                item,
                modality,
                label: sample.labels.map(|l| l[k]),
                u: project(r, &a),
                v: project(r, &b),
            });
        }
    }

    Ok(LatentDiagnostics {
        image: moments(&v_rows, d),
        text: moments(&t_rows, d),
        pooled: moments(&pooled_rows, d),
        prior_accuracy,
        encoded_accuracy,
        disc_balanced_accuracy: 0.5 * (prior_accuracy + encoded_accuracy),
        projection,
    })
}

/// Encodes up to `cap` items per modality of `split` (in id order) and
/// diagnoses them.
pub fn latent_diagnostics(
    params: &ModelParams,
    model: &ModelConfig,
    dataset: &Dataset,
    split: Split,
    cap: usize,
    seed: u64,
) -> Result<LatentDiagnostics, EvalError> {
    let mut images = dataset.images_in(split);
    let mut texts = dataset.texts_in(split);
    images.truncate(cap);
    texts.truncate(cap);
    if images.is_empty() && texts.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let zv = embed_images(params, model, &dataset.image_features, &images)?;
    let zt = embed_texts(params, model, &dataset.text, &texts)?;
    let v_labels: Option<Vec<u32>> = dataset.image_labels.as_ref().map(|l| images.iter().map(|&i| l[i]).collect());
    let t_labels: Option<Vec<u32>> = dataset.text_labels.as_ref().map(|l| texts.iter().map(|&t| l[t]).collect());
    diagnose_latents(
        LatentSample {
            latents: &zv,
            items: &images,
            labels: v_labels.as_deref(),
        },
        LatentSample {
            latents: &zt,
            items: &texts,
            labels: t_labels.as_deref(),
        },
        params,
        seed,
    )
}

/// `item\tmodality\tlabel\tu\tv` rows, `-` for unknown labels.
pub fn projection_table(rows: &[ProjectionRow]) -> String {
    let mut out = String::from("item\tmodality\tlabel\tu\tv\n");
    for r in rows {
        let label = r.label.map_or_else(|| "-".to_string(), |l| l.to_string());
        let modality = match r.modality {
            Modality::Image => "image",
            Modality::Text => "text",
        };
        writeln!(out, "{}\t{}\t{}\t{:.6}\t{:.6}", r.item, modality, label, r.u, r.v).expect("write to string");
    }
    out
}
