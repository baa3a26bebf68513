use std::sync::Arc;

use super::{LatentBatchPair, ObjectiveError, Psi, ReconNorm};
use crate::autodiff::{Recording, Tensor};
use crate::nets::{discriminate, ModelParams, ENCODED_CLASS, PRIOR_CLASS};

fn same_shape(a: &Tensor, b: &Tensor) -> Result<(), ObjectiveError> {
    if a.shape() != b.shape() || a.rank() != 2 {
        return Err(ObjectiveError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean over rows of the per-row ℓ1 or ℓ2 (not squared) norm of
/// `inputs - reconstructions`.
pub fn recon_loss(
    rec: &mut Recording,
    inputs: &Tensor,
    reconstructions: &Tensor,
    norm: ReconNorm,
) -> Result<Tensor, ObjectiveError> {
    same_shape(inputs, reconstructions)?;
    let diff = rec.sub(inputs, reconstructions)?;
    let total = match norm {
        ReconNorm::L1 => rec.l1_norm(&diff)?,
        ReconNorm::L2 => {
            let norms = rec.row_norm(&diff)?;
            rec.sum(&norms)?
        }
    };
    Ok(rec.scale(&total, 1.0 / inputs.rows() as f64)?)
}

/// Mean over rows of the squared Euclidean distance; the reconstruction
/// term for text given as feature vectors.
pub fn squared_recon_loss(
    rec: &mut Recording,
    inputs: &Tensor,
    reconstructions: &Tensor,
) -> Result<Tensor, ObjectiveError> {
    same_shape(inputs, reconstructions)?;
    let diff = rec.sub(inputs, reconstructions)?;
    let total = rec.squared_l2(&diff)?;
    Ok(rec.scale(&total, 1.0 / inputs.rows() as f64)?)
}

/// `-mean log p(class)` over the rows of a logit matrix.
fn cross_entropy(rec: &mut Recording, logits: &Tensor, classes: &[usize]) -> Result<Tensor, ObjectiveError> {
    let (n, k) = (logits.rows(), logits.cols());
    let logp = rec.log_softmax(logits)?;
    let mut one_hot = vec![0.0; n * k];
    for (i, &c) in classes.iter().enumerate() {
        one_hot[i * k + c] = 1.0;
    }
    let picked = rec.mul(&logp, &Tensor::matrix(n, k, one_hot)?)?;
    let total = rec.sum(&picked)?;
    Ok(rec.scale(&total, -1.0 / n as f64)?)
}

/// Two-class cross-entropy of the discriminator: prior samples are class 0,
/// pooled image and text latents class 1, averaged over all rows. The
/// latents enter as constants.
pub fn gan_discriminator_loss(
    rec: &mut Recording,
    prior_samples: &Tensor,
    encoded: &LatentBatchPair,
    disc_params: &ModelParams,
) -> Result<Tensor, ObjectiveError> {
    let n_enc = encoded.v_latents.rows() + encoded.t_latents.rows();
    if prior_samples.rank() != 2 || prior_samples.rows() != n_enc {
        return Err(ObjectiveError::CountMismatch {
            prior: prior_samples.rows(),
            encoded: n_enc,
        });
    }
    if prior_samples.cols() != encoded.latent_dim() {
        return Err(ObjectiveError::ShapeMismatch(format!(
            "prior width {} vs latent width {}",
            prior_samples.cols(),
            encoded.latent_dim()
        )));
    }
    let v = encoded.v_latents.detach();
    let t = encoded.t_latents.detach();
    let all = rec.concat(&[prior_samples, &v, &t], 0)?;
    let logits = discriminate(rec, &all, disc_params)?;
    let classes: Vec<usize> = (0..2 * n_enc)
        .map(|i| if i < n_enc { PRIOR_CLASS } else { ENCODED_CLASS })
        .collect();
    cross_entropy(rec, &logits, &classes)
}

/// Non-saturating generator terms `-mean log D_prior(z)` for the image and
/// the text latents. Gradients reach the discriminator only if its
/// parameters are registered on `rec`; the trainer passes them as constants.
pub fn gan_generator_loss(
    rec: &mut Recording,
    encoded: &LatentBatchPair,
    disc_params: &ModelParams,
) -> Result<(Tensor, Tensor), ObjectiveError> {
    let mut term = |latents: &Tensor| -> Result<Tensor, ObjectiveError> {
        let logits = discriminate(rec, latents, disc_params)?;
        cross_entropy(rec, &logits, &vec![PRIOR_CLASS; latents.rows()])
    };
    Ok((term(&encoded.v_latents)?, term(&encoded.t_latents)?))
}

/// KL divergence to the unit Gaussian averaged over rows, and reparameterized
/// samples `mu + exp(log_var / 2) ⊙ noise`.
pub fn vae_kl_and_sample(
    rec: &mut Recording,
    mu: &Tensor,
    log_var: &Tensor,
    noise: &Tensor,
) -> Result<(Tensor, Tensor), ObjectiveError> {
    same_shape(mu, log_var)?;
    same_shape(mu, noise)?;
    let var = rec.exp(log_var)?;
    let mu2 = rec.mul(mu, mu)?;
    let s = rec.add(&var, &mu2)?;
    let s = rec.sub(&s, log_var)?;
    let s = rec.add_scalar(&s, -1.0)?;
    let total = rec.sum(&s)?;
    let kl = rec.scale(&total, 0.5 / mu.rows() as f64)?;

    let half = rec.scale(log_var, 0.5)?;
    let std = rec.exp(&half)?;
    let spread = rec.mul(&std, noise)?;
    let samples = rec.add(mu, &spread)?;
    Ok((kl, samples))
}

fn paired_rows(
    rec: &mut Recording,
    encoded: &LatentBatchPair,
) -> Result<(Tensor, Tensor), ObjectiveError> {
    let vi: Vec<usize> = encoded.paired_index.iter().map(|p| p.0).collect();
    let ti: Vec<usize> = encoded.paired_index.iter().map(|p| p.1).collect();
    Ok((
        rec.gather_rows(&encoded.v_latents, &vi)?,
        rec.gather_rows(&encoded.t_latents, &ti)?,
    ))
}

/// Mean over supervised pairs of the squared distance between latents.
pub fn mse_alignment(rec: &mut Recording, encoded: &LatentBatchPair) -> Result<Tensor, ObjectiveError> {
    let n = encoded.paired_index.len();
    if n == 0 {
        return Err(ObjectiveError::EmptyPairs);
    }
    let (v, t) = paired_rows(rec, encoded)?;
    let diff = rec.sub(&v, &t)?;
    let total = rec.squared_l2(&diff)?;
    Ok(rec.scale(&total, 1.0 / n as f64)?)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, ObjectiveError> {
    if a.len() != b.len() {
        return Err(ObjectiveError::ShapeMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(ObjectiveError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `s[i][j] = cos(a_i, b_j)` as a recorded `rows(a) x rows(b)` tensor.
pub fn cosine_similarity_matrix(rec: &mut Recording, a: &Tensor, b: &Tensor) -> Result<Tensor, ObjectiveError> {
    if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
        return Err(ObjectiveError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let an = rec.normalize_rows(a).map_err(zero_norm)?;
    let bn = rec.normalize_rows(b).map_err(zero_norm)?;
    let bt = rec.transpose(&bn)?;
    Ok(rec.matmul(&an, &bt)?)
}

fn zero_norm(e: crate::autodiff::AutodiffError) -> ObjectiveError {
    match e {
        crate::autodiff::AutodiffError::ZeroNorm { .. } => ObjectiveError::ZeroNorm,
        other => other.into(),
    }
}

/// Bidirectional hinge over a square similarity matrix whose diagonal holds
/// the matching pairs: row `l` supplies the text negatives `s[l][l']`,
/// column `l` the image negatives `s[l'][l]`. Averaged over pairs.
pub fn hinge_from_similarity(
    rec: &mut Recording,
    sim: &Tensor,
    margin: f64,
    psi: Psi,
) -> Result<Tensor, ObjectiveError> {
    if sim.rank() != 2 || sim.rows() != sim.cols() {
        return Err(ObjectiveError::ShapeMismatch(format!("similarity {:?} is not square", sim.shape())));
    }
    let n = sim.rows();
    if n < 2 {
        return Err(ObjectiveError::TooFewPairs(n));
    }
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    let off: Vec<f64> = eye.iter().map(|e| 1.0 - e).collect();
    let eye = Tensor::matrix(n, n, eye)?;
    let off = Arc::new(off);
    let diag_only = rec.mul(sim, &eye)?;
    let pos = rec.row_sum(&diag_only)?; // n x 1
    let ones_col = Tensor::filled(&[n, 1], 1.0);
    let ones_row = Tensor::filled(&[1, n], 1.0);
    let pos_rows = rec.matmul(&pos, &ones_row)?; // [l][*] = s_ll
    let pos_t = rec.transpose(&pos)?;
    let pos_cols = rec.matmul(&ones_col, &pos_t)?; // [*][l] = s_ll

    let text_neg = rec.sub(sim, &pos_rows)?;
    let text_neg = rec.add_scalar(&text_neg, margin)?;
    let text_neg = rec.relu(&text_neg)?;
    let text_neg = rec.dropout(&text_neg, off.clone())?;
    let img_neg = rec.sub(sim, &pos_cols)?;
    let img_neg = rec.add_scalar(&img_neg, margin)?;
    let img_neg = rec.relu(&img_neg)?;
    let img_neg = rec.dropout(&img_neg, off)?;

    let total = match psi {
        Psi::Sum => {
            let a = rec.sum(&text_neg)?;
            let b = rec.sum(&img_neg)?;
            rec.add(&a, &b)?
        }
        Psi::Max => {
            let a = rec.row_max(&text_neg)?;
            let a = rec.sum(&a)?;
            let img_t = rec.transpose(&img_neg)?;
            let b = rec.row_max(&img_t)?;
            let b = rec.sum(&b)?;
            rec.add(&a, &b)?
        }
    };
    Ok(rec.scale(&total, 1.0 / n as f64)?)
}

/// Max-margin ranking loss on cosine similarity; the other supervised pairs
/// of the batch act as negatives.
pub fn max_margin_hinge(
    rec: &mut Recording,
    encoded: &LatentBatchPair,
    margin: f64,
    psi: Psi,
) -> Result<Tensor, ObjectiveError> {
    let n = encoded.paired_index.len();
    if n < 2 {
        return Err(ObjectiveError::TooFewPairs(n));
    }
    let (v, t) = paired_rows(rec, encoded)?;
    let sim = cosine_similarity_matrix(rec, &v, &t)?;
    hinge_from_similarity(rec, &sim, margin, psi)
}

/// Recorded `rows(a) x rows(b)` matrix of squared Euclidean distances.
fn squared_distances(rec: &mut Recording, a: &Tensor, b: &Tensor) -> Result<Tensor, ObjectiveError> {
    let (n, m) = (a.rows(), b.rows());
    let a2 = rec.mul(a, a)?;
    let a2 = rec.row_sum(&a2)?;
    let b2 = rec.mul(b, b)?;
    let b2 = rec.row_sum(&b2)?;
    let b2 = rec.transpose(&b2)?;
    let left = rec.matmul(&a2, &Tensor::filled(&[1, m], 1.0))?;
    let right = rec.matmul(&Tensor::filled(&[n, 1], 1.0), &b2)?;
    let bt = rec.transpose(b)?;
    let cross = rec.matmul(a, &bt)?;
    let cross = rec.scale(&cross, -2.0)?;
    let s = rec.add(&left, &right)?;
    Ok(rec.add(&s, &cross)?)
}

/// Sum of Gaussian kernels `exp(-|a - b|^2 / (2 σ^2))` over the bandwidths,
/// summed over entries selected by `mask` and divided by `count`.
fn kernel_mean(
    rec: &mut Recording,
    dist: &Tensor,
    bandwidths: &[f64],
    mask: Option<Arc<Vec<f64>>>,
    count: f64,
) -> Result<Tensor, ObjectiveError> {
    let mut total: Option<Tensor> = None;
    for &bw in bandwidths {
        let k = rec.scale(dist, -1.0 / (2.0 * bw * bw))?;
        let k = rec.exp(&k)?;
        let k = match &mask {
            Some(m) => rec.dropout(&k, m.clone())?,
            None => k,
        };
        let s = rec.sum(&k)?;
        total = Some(match total {
            Some(t) => rec.add(&t, &s)?,
            None => s,
        });
    }
    let total = total.expect("at least one bandwidth");
    Ok(rec.scale(&total, 1.0 / count)?)
}

fn off_diagonal(n: usize) -> Arc<Vec<f64>> {
    Arc::new((0..n * n).map(|k| if k / n == k % n { 0.0 } else { 1.0 }).collect())
}

/// Unbiased squared MMD with a sum of Gaussian kernels. For equal sample
/// counts the cross term also skips `i = j`, so identical samples give
/// exactly zero.
pub fn mmd_loss(
    rec: &mut Recording,
    x: &Tensor,
    y: &Tensor,
    bandwidths: &[f64],
) -> Result<Tensor, ObjectiveError> {
    if x.rank() != 2 || y.rank() != 2 || x.cols() != y.cols() {
        return Err(ObjectiveError::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    let (n, m) = (x.rows(), y.rows());
    if n < 2 || m < 2 {
        return Err(ObjectiveError::TooFewSamples(n.min(m)));
    }
    if bandwidths.is_empty() || bandwidths.iter().any(|&b| !(b > 0.0) || !b.is_finite()) {
        return Err(ObjectiveError::InvalidWeights(format!("bandwidths {bandwidths:?}")));
    }
    let dxx = squared_distances(rec, x, x)?;
    let dyy = squared_distances(rec, y, y)?;
    let dxy = squared_distances(rec, x, y)?;
    let kxx = kernel_mean(rec, &dxx, bandwidths, Some(off_diagonal(n)), (n * (n - 1)) as f64)?;
    let kyy = kernel_mean(rec, &dyy, bandwidths, Some(off_diagonal(m)), (m * (m - 1)) as f64)?;
    let kxy = if n == m {
        kernel_mean(rec, &dxy, bandwidths, Some(off_diagonal(n)), (n * (n - 1)) as f64)?
    } else {
        kernel_mean(rec, &dxy, bandwidths, None, (n * m) as f64)?
    };
    let s = rec.add(&kxx, &kyy)?;
    let kxy2 = rec.scale(&kxy, -2.0)?;
    Ok(rec.add(&s, &kxy2)?)
}
