use std::io::BufRead;

use super::{GruConfig, ModelParams, NetError};
use crate::autodiff::{Recording, Tensor};
use crate::data::{SOS_ID, UNK_ID};

/// The nine tensors of one GRU direction.
pub struct GruWeights<'a> {
    w_z: &'a Tensor,
    w_r: &'a Tensor,
    w_h: &'a Tensor,
    u_z: &'a Tensor,
    u_r: &'a Tensor,
    u_h: &'a Tensor,
    b_z: &'a Tensor,
    b_r: &'a Tensor,
    b_h: &'a Tensor,
}

impl<'a> GruWeights<'a> {
    pub fn from_params(params: &'a ModelParams, prefix: &str) -> Result<Self, NetError> {
        let get = |n: &str| params.get(&format!("{prefix}.{n}"));
        Ok(Self {
            w_z: get("w_z")?,
            w_r: get("w_r")?,
            w_h: get("w_h")?,
            u_z: get("u_z")?,
            u_r: get("u_r")?,
            u_h: get("u_h")?,
            b_z: get("b_z")?,
            b_r: get("b_r")?,
            b_h: get("b_h")?,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w_z.shape()[0]
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.shape()[0]
    }
}

/// One GRU step on row vectors (or a batch of rows):
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h~ = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
pub fn gru_cell(
    rec: &mut Recording,
    x: &Tensor,
    h_prev: &Tensor,
    w: &GruWeights<'_>,
) -> Result<Tensor, NetError> {
    if x.rank() != 2 || x.cols() != w.input_dim() {
        return Err(NetError::WidthMismatch {
            what: "gru input".into(),
            expected: w.input_dim(),
            got: x.cols(),
        });
    }
    if h_prev.rank() != 2 || h_prev.cols() != w.hidden_dim() || h_prev.rows() != x.rows() {
        return Err(NetError::WidthMismatch {
            what: "gru hidden state".into(),
            expected: w.hidden_dim(),
            got: h_prev.cols(),
        });
    }
    let gate = |rec: &mut Recording, wx: &Tensor, uh: &Tensor, b: &Tensor| -> Result<Tensor, NetError> {
        let xw = rec.matmul(x, wx)?;
        let hu = rec.matmul(h_prev, uh)?;
        let s = rec.add(&xw, &hu)?;
        Ok(rec.add_bias(&s, b)?)
    };
    let z_pre = gate(rec, w.w_z, w.u_z, w.b_z)?;
    let z = rec.sigmoid(&z_pre)?;
    let r_pre = gate(rec, w.w_r, w.u_r, w.b_r)?;
    let r = rec.sigmoid(&r_pre)?;
    let rh = rec.mul(&r, h_prev)?;
    let xw = rec.matmul(x, w.w_h)?;
    let rhu = rec.matmul(&rh, w.u_h)?;
    let cand = rec.add(&xw, &rhu)?;
    let cand = rec.add_bias(&cand, w.b_h)?;
    let cand = rec.tanh(&cand)?;
    // (1 - z) ⊙ h + z ⊙ h~
    let neg_z = rec.scale(&z, -1.0)?;
    let keep = rec.add_scalar(&neg_z, 1.0)?;
    let kept = rec.mul(&keep, h_prev)?;
    let fresh = rec.mul(&z, &cand)?;
    Ok(rec.add(&kept, &fresh)?)
}

fn check_tokens(tokens: &[u32], vocab: usize) -> Result<(), NetError> {
    if tokens.is_empty() {
        return Err(NetError::EmptySequence);
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= vocab) {
        return Err(NetError::OutOfVocabulary { id, vocab });
    }
    Ok(())
}

fn run_direction(
    rec: &mut Recording,
    inputs: &[Tensor],
    w: &GruWeights<'_>,
    reverse: bool,
) -> Result<Vec<Tensor>, NetError> {
    let mut h = Tensor::zeros(&[1, w.hidden_dim()]);
    let mut states = vec![None; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        h = gru_cell(rec, &inputs[t], &h, w)?;
        states[t] = Some(h.clone());
    }
    Ok(states.into_iter().map(|s| s.expect("every step visited")).collect())
}

/// Bidirectional encoder output before the latent projection: `1 x fc_dim`.
fn encode_features(
    rec: &mut Recording,
    tokens: &[u32],
    params: &ModelParams,
    config: &GruConfig,
) -> Result<Tensor, NetError> {
    let embed = params.get("enc_t.embed.weight")?;
    check_tokens(tokens, embed.shape()[0])?;
    let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
    let emb = rec.gather_rows(embed, &ids)?;
    let mut inputs = (0..ids.len())
        .map(|t| rec.slice(&emb, 0, t, t + 1))
        .collect::<Result<Vec<_>, _>>()?;
    let mut last = None;
    for layer in 0..config.num_layers {
        let fwd_w = GruWeights::from_params(params, &format!("enc_t.gru{layer}.fwd"))?;
        let bwd_w = GruWeights::from_params(params, &format!("enc_t.gru{layer}.bwd"))?;
        let fwd = run_direction(rec, &inputs, &fwd_w, false)?;
        let bwd = run_direction(rec, &inputs, &bwd_w, true)?;
        last = Some(rec.concat(&[&fwd[fwd.len() - 1], &bwd[0]], 1)?);
        if layer + 1 < config.num_layers {
            inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(f, b)| rec.concat(&[f, b], 1))
                .collect::<Result<Vec<_>, _>>()?;
        }
    }
    let last = last.expect("num_layers >= 1");
    let fc_w = params.get("enc_t.fc.weight")?;
    let fc_b = params.get("enc_t.fc.bias")?;
    let h = rec.linear(&last, fc_w, fc_b)?;
    Ok(rec.relu(&h)?)
}

/// Sentence to a `1 x d` latent: embedding, bidirectional GRU, the wide
/// fully connected layer, then a linear map to the latent space.
pub fn gru_encode(
    rec: &mut Recording,
    tokens: &[u32],
    params: &ModelParams,
    config: &GruConfig,
) -> Result<Tensor, NetError> {
    let h = encode_features(rec, tokens, params, config)?;
    let w = params.get("enc_t.latent.weight")?;
    let b = params.get("enc_t.latent.bias")?;
    Ok(rec.linear(&h, w, b)?)
}

/// Mean and log-variance variant of [`gru_encode`].
pub fn gru_encode_variational(
    rec: &mut Recording,
    tokens: &[u32],
    params: &ModelParams,
    config: &GruConfig,
) -> Result<(Tensor, Tensor), NetError> {
    let h = encode_features(rec, tokens, params, config)?;
    let mu = rec.linear(&h, params.get("enc_t.latent.weight")?, params.get("enc_t.latent.bias")?)?;
    let lv = rec.linear(&h, params.get("enc_t.logvar.weight")?, params.get("enc_t.logvar.bias")?)?;
    Ok((mu, lv))
}

/// Negative log-likelihood of `targets` under the decoder started from
/// `latent`.
///
/// Step `m` reads the start token for `m = 0` and `targets[m - 1]` after
/// that; where `dropout_mask[m]` is set the input is replaced by the unknown
/// word. The start token is never dropped. Targets are never dropped.
pub fn gru_decode_nll(
    rec: &mut Recording,
    latent: &Tensor,
    targets: &[u32],
    params: &ModelParams,
    dropout_mask: &[bool],
) -> Result<Tensor, NetError> {
    let embed = params.get("dec_t.embed.weight")?;
    let vocab = embed.shape()[0];
    check_tokens(targets, vocab)?;
    if dropout_mask.len() != targets.len() {
        return Err(NetError::MaskLength {
            mask: dropout_mask.len(),
            tokens: targets.len(),
        });
    }
    let init_w = params.get("dec_t.init.weight")?;
    if latent.rank() != 2 || latent.rows() != 1 || latent.cols() != init_w.shape()[0] {
        return Err(NetError::WidthMismatch {
            what: "decoder latent".into(),
            expected: init_w.shape()[0],
            got: latent.cols(),
        });
    }
    let h0 = rec.linear(latent, init_w, params.get("dec_t.init.bias")?)?;
    let mut h = rec.tanh(&h0)?;

    let input_ids: Vec<usize> = (0..targets.len())
        .map(|m| match m {
            0 => SOS_ID as usize,
            _ if dropout_mask[m] => UNK_ID as usize,
            _ => targets[m - 1] as usize,
        })
        .collect();
    let emb = rec.gather_rows(embed, &input_ids)?;
    let w = GruWeights::from_params(params, "dec_t.gru")?;
    let mut states = Vec::with_capacity(targets.len());
    for m in 0..targets.len() {
        let x = rec.slice(&emb, 0, m, m + 1)?;
        h = gru_cell(rec, &x, &h, &w)?;
        states.push(h.clone());
    }
    let refs: Vec<&Tensor> = states.iter().collect();
    let hs = rec.concat(&refs, 0)?;
    let logits = rec.linear(&hs, params.get("dec_t.out.weight")?, params.get("dec_t.out.bias")?)?;
    let logp = rec.log_softmax(&logits)?;
    let mut one_hot = vec![0.0; targets.len() * vocab];
    for (m, &t) in targets.iter().enumerate() {
        one_hot[m * vocab + t as usize] = 1.0;
    }
    let one_hot = Tensor::matrix(targets.len(), vocab, one_hot)?;
    let picked = rec.mul(&logp, &one_hot)?;
    let total = rec.sum(&picked)?;
    Ok(rec.scale(&total, -1.0)?)
}

/// Overwrites rows of both embedding tables from a whitespace-separated
/// word-vector text file (`word v1 v2 ...` per line). Returns how many
/// vocabulary rows were replaced.
pub fn apply_pretrained_embeddings<R: BufRead>(
    params: &mut ModelParams,
    reader: R,
    token_id: impl Fn(&str) -> Option<u32>,
) -> Result<usize, NetError> {
    let mut replaced = 0;
    let mut tables = Vec::new();
    for name in ["enc_t.embed.weight", "dec_t.embed.weight"] {
        tables.push((name, params.get(name)?.to_vec(), params.get(name)?.shape().to_vec()));
    }
    let dim = tables[0].2[1];
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| NetError::WordVectors(e.to_string()))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let Some(id) = token_id(word).filter(|&id| (id as usize) < tables[0].2[0]) else {
            continue;
        };
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| NetError::WordVectors(format!("line {}: {e}", lineno + 1)))?;
        if values.len() != dim {
            return Err(NetError::WordVectors(format!(
                "line {}: {} values for embedding width {dim}",
                lineno + 1,
                values.len()
            )));
        }
        for (_, table, _) in tables.iter_mut() {
            let row = id as usize * dim;
            table[row..row + dim].copy_from_slice(&values);
        }
        replaced += 1;
    }
    for (name, table, shape) in tables {
        params.insert(name, Tensor::new(shape, table)?);
    }
    Ok(replaced)
}
