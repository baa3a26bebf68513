use super::{Modality, ModelParams, NetError};
use crate::autodiff::{Recording, Tensor};

fn layer<'a>(params: &'a ModelParams, prefix: &str) -> Result<(&'a Tensor, &'a Tensor), NetError> {
    Ok((
        params.get(&format!("{prefix}.weight"))?,
        params.get(&format!("{prefix}.bias"))?,
    ))
}

fn check_width(what: String, x: &Tensor, w: &Tensor) -> Result<(), NetError> {
    if x.rank() != 2 || x.cols() != w.shape()[0] {
        return Err(NetError::WidthMismatch {
            what,
            expected: w.shape()[0],
            got: x.cols(),
        });
    }
    Ok(())
}

fn hidden(
    rec: &mut Recording,
    x: &Tensor,
    params: &ModelParams,
    prefix: &str,
) -> Result<Tensor, NetError> {
    let (w1, b1) = layer(params, &format!("{prefix}.layer1"))?;
    check_width(format!("{prefix} input"), x, w1)?;
    let h = rec.linear(x, w1, b1)?;
    Ok(rec.relu(&h)?)
}

/// `batch x input_dim -> batch x d`: one relu hidden layer, linear latent.
pub fn mlp_encode(
    rec: &mut Recording,
    features: &Tensor,
    params: &ModelParams,
    which: Modality,
) -> Result<Tensor, NetError> {
    let prefix = which.encoder_prefix();
    let h = hidden(rec, features, params, prefix)?;
    let (w2, b2) = layer(params, &format!("{prefix}.layer2"))?;
    Ok(rec.linear(&h, w2, b2)?)
}

/// Mean and log-variance heads over a shared hidden layer.
pub fn mlp_encode_variational(
    rec: &mut Recording,
    features: &Tensor,
    params: &ModelParams,
    which: Modality,
) -> Result<(Tensor, Tensor), NetError> {
    let prefix = which.encoder_prefix();
    let h = hidden(rec, features, params, prefix)?;
    let (w2, b2) = layer(params, &format!("{prefix}.layer2"))?;
    let (wv, bv) = layer(params, &format!("{prefix}.logvar"))?;
    let mu = rec.linear(&h, w2, b2)?;
    let log_var = rec.linear(&h, wv, bv)?;
    Ok((mu, log_var))
}

/// `batch x d -> batch x input_dim`, mirror of the encoder.
pub fn mlp_decode(
    rec: &mut Recording,
    latent: &Tensor,
    params: &ModelParams,
    which: Modality,
) -> Result<Tensor, NetError> {
    let prefix = which.decoder_prefix();
    let h = hidden(rec, latent, params, prefix)?;
    let (w2, b2) = layer(params, &format!("{prefix}.layer2"))?;
    Ok(rec.linear(&h, w2, b2)?)
}
