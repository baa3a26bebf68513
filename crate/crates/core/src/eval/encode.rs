use super::EvalError;
use crate::autodiff::{Recording, Tensor};
use crate::data::{Matrix, TextPayload};
use crate::nets::{gru_encode, mlp_encode, Modality, ModelConfig, ModelParams, TextEncoderConfig};

const CHUNK: usize = 512;

fn mlp_rows(params: &ModelParams, which: Modality, features: &Matrix, idx: &[usize], d: usize) -> Result<Matrix, EvalError> {
    let mut out = Vec::with_capacity(idx.len() * d);
    let mut rec = Recording::inactive();
    for chunk in idx.chunks(CHUNK) {
        let x = features.select_rows(chunk).to_tensor();
        let z = mlp_encode(&mut rec, &x, params, which)?;
        out.extend_from_slice(z.values());
    }
    Ok(Matrix::new(idx.len(), d, out)?)
}

/// Latents (the mean head for variational encoders) of the selected image rows.
pub fn embed_images(
    params: &ModelParams,
    model: &ModelConfig,
    features: &Matrix,
    idx: &[usize],
) -> Result<Matrix, EvalError> {
    if features.cols() != model.image.input_dim {
        return Err(EvalError::DimensionMismatch {
            what: "image features",
            expected: model.image.input_dim,
            got: features.cols(),
        });
    }
    mlp_rows(params, Modality::Image, features, idx, model.latent_dim())
}

/// Latents of the selected texts, either feature rows or token sentences.
pub fn embed_texts(
    params: &ModelParams,
    model: &ModelConfig,
    text: &TextPayload,
    idx: &[usize],
) -> Result<Matrix, EvalError> {
    let d = model.latent_dim();
    match (&model.text, text) {
        (TextEncoderConfig::Features(cfg), TextPayload::Features(m)) => {
            if m.cols() != cfg.input_dim {
                return Err(EvalError::DimensionMismatch {
                    what: "text features",
                    expected: cfg.input_dim,
                    got: m.cols(),
                });
            }
            mlp_rows(params, Modality::Text, m, idx, d)
        }
        (TextEncoderConfig::Gru(cfg), TextPayload::Tokens(sentences)) => {
            let mut rec = Recording::inactive();
            let mut out = Vec::with_capacity(idx.len() * d);
            for &i in idx {
                let z: Tensor = gru_encode(&mut rec, &sentences[i], params, cfg)?;
                out.extend_from_slice(z.values());
            }
            Ok(Matrix::new(idx.len(), d, out)?)
        }
        (TextEncoderConfig::Features(_), TextPayload::Tokens(_)) => {
            Err(EvalError::PayloadMismatch("token sentences given to a feature encoder".into()))
        }
        (TextEncoderConfig::Gru(_), TextPayload::Features(_)) => {
            Err(EvalError::PayloadMismatch("feature rows given to a GRU encoder".into()))
        }
    }
}
