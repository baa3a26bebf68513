use super::{ModelParams, NetError};
use crate::autodiff::{Recording, Tensor, LEAKY_SLOPE};

/// Class index the discriminator assigns to prior samples.
pub const PRIOR_CLASS: usize = 0;
/// Class index for encoder outputs.
pub const ENCODED_CLASS: usize = 1;

/// `batch x d -> batch x 2` logits. Three fully connected layers, leaky
/// ReLU after the first two, linear output.
pub fn discriminate(
    rec: &mut Recording,
    latents: &Tensor,
    params: &ModelParams,
) -> Result<Tensor, NetError> {
    let w1 = params.get("disc.layer1.weight")?;
    if latents.rank() != 2 || latents.cols() != w1.shape()[0] {
        return Err(NetError::WidthMismatch {
            what: "discriminator input".into(),
            expected: w1.shape()[0],
            got: latents.cols(),
        });
    }
    let mut h = latents.clone();
    for layer in 1..=3 {
        let w = params.get(&format!("disc.layer{layer}.weight"))?;
        let b = params.get(&format!("disc.layer{layer}.bias"))?;
        h = rec.linear(&h, w, b)?;
        if layer < 3 {
            h = rec.leaky_relu(&h, LEAKY_SLOPE)?;
        }
    }
    Ok(h)
}
