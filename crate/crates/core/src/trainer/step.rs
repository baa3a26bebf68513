use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{adam_step, OptimizerState, TrainConfig, TrainError};
use crate::autodiff::{Recording, Tensor};
use crate::data::{Batch, Dataset, TextPayload};
use crate::nets::{
    gru_decode_nll, gru_encode, gru_encode_variational, is_discriminator_param, mlp_decode, mlp_encode,
    mlp_encode_variational, Modality, ModelConfig, ModelParams, TextEncoderConfig,
};
use crate::objectives::{
    gan_discriminator_loss, jwae_total_loss, vae_kl_and_sample, BatchForward, LatentBatchPair, LossTerms,
    Supervision, TextReconstruction,
};

/// Parameters and both optimizer states of a run, with the run's noise stream.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ModelParams,
    pub opt_main: OptimizerState,
    pub opt_disc: OptimizerState,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(params: ModelParams, rng: ChaCha8Rng) -> Self {
        Self {
            params,
            opt_main: OptimizerState::new(),
            opt_disc: OptimizerState::new(),
            rng,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Result<Tensor, TrainError> {
    let v = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Ok(Tensor::matrix(rows, cols, v)?)
}

struct Encoded {
    zv: Tensor,
    zt: Tensor,
    kl: Option<(Tensor, Tensor)>,
}

fn stack(rec: &mut Recording, rows: &[Tensor]) -> Result<Tensor, TrainError> {
    let refs: Vec<&Tensor> = rows.iter().collect();
    Ok(rec.concat(&refs, 0)?)
}

/// Text encoder over the selected items: `(mu, log_var)` when variational.
fn encode_texts(
    rec: &mut Recording,
    params: &ModelParams,
    model: &ModelConfig,
    dataset: &Dataset,
    texts: &[usize],
) -> Result<(Tensor, Option<Tensor>), TrainError> {
    match (&model.text, &dataset.text) {
        (TextEncoderConfig::Features(_), TextPayload::Features(m)) => {
            let y = m.select_rows(texts).to_tensor();
            if model.variational {
                let (mu, lv) = mlp_encode_variational(rec, &y, params, Modality::Text)?;
                Ok((mu, Some(lv)))
            } else {
                Ok((mlp_encode(rec, &y, params, Modality::Text)?, None))
            }
        }
        (TextEncoderConfig::Gru(cfg), TextPayload::Tokens(s)) => {
            if model.variational {
                let mut mus = Vec::with_capacity(texts.len());
                let mut lvs = Vec::with_capacity(texts.len());
                for &t in texts {
                    let (mu, lv) = gru_encode_variational(rec, &s[t], params, cfg)?;
                    mus.push(mu);
                    lvs.push(lv);
                }
                Ok((stack(rec, &mus)?, Some(stack(rec, &lvs)?)))
            } else {
                let zs = texts
                    .iter()
                    .map(|&t| gru_encode(rec, &s[t], params, cfg))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok((stack(rec, &zs)?, None))
            }
        }
        _ => Err(TrainError::InvalidConfig(
            "text payload kind does not match the text encoder".into(),
        )),
    }
}

/// Latents of the batch rows. Variational encoders sample with noise from `rng`.
fn encode(
    rec: &mut Recording,
    params: &ModelParams,
    model: &ModelConfig,
    dataset: &Dataset,
    images: &[usize],
    texts: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor, Encoded), TrainError> {
    let x = dataset.image_features.select_rows(images).to_tensor();
    let d = model.latent_dim();
    if model.variational {
        let (mu_v, lv_v) = mlp_encode_variational(rec, &x, params, Modality::Image)?;
        let (mu_t, lv_t) = encode_texts(rec, params, model, dataset, texts)?;
        let lv_t = lv_t.expect("variational text encoder");
        let nv = normal(rng, images.len(), d)?;
        let nt = normal(rng, texts.len(), d)?;
        let (kl_v, zv) = vae_kl_and_sample(rec, &mu_v, &lv_v, &nv)?;
        let (kl_t, zt) = vae_kl_and_sample(rec, &mu_t, &lv_t, &nt)?;
        Ok((
            x,
            Encoded {
                zv,
                zt,
                kl: Some((kl_v, kl_t)),
            },
        ))
    } else {
        let zv = mlp_encode(rec, &x, params, Modality::Image)?;
        let (zt, _) = encode_texts(rec, params, model, dataset, texts)?;
        Ok((x, Encoded { zv, zt, kl: None }))
    }
}

/// Rows of a batch: paired items first, then the unpaired fills.
fn batch_rows(batch: &Batch) -> (Vec<usize>, Vec<usize>, Vec<(usize, usize)>) {
    let mut images: Vec<usize> = batch.pairs.iter().map(|p| p.0).collect();
    let mut texts: Vec<usize> = batch.pairs.iter().map(|p| p.1).collect();
    images.extend_from_slice(&batch.unpaired_images);
    texts.extend_from_slice(&batch.unpaired_texts);
    let paired = (0..batch.pairs.len()).map(|k| (k, k)).collect();
    (images, texts, paired)
}

/// Full generator-side forward pass of one batch on `rec`.
pub fn forward_batch(
    rec: &mut Recording,
    params: &ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    batch: &Batch,
    rng: &mut ChaCha8Rng,
) -> Result<BatchForward, TrainError> {
    let (images, texts, paired) = batch_rows(batch);
    let (x, enc) = encode(rec, params, model, dataset, &images, &texts, rng)?;
    let w = &config.weights;

    let image_outputs = if w.lambda1 > 0.0 {
        mlp_decode(rec, &enc.zv, params, Modality::Image)?
    } else {
        x.clone()
    };
    let text = match (&model.text, &dataset.text) {
        (TextEncoderConfig::Features(_), TextPayload::Features(m)) => {
            let y = m.select_rows(&texts).to_tensor();
            let out = if w.lambda2 > 0.0 {
                mlp_decode(rec, &enc.zt, params, Modality::Text)?
            } else {
                y.clone()
            };
            TextReconstruction::Features { inputs: y, outputs: out }
        }
        (TextEncoderConfig::Gru(cfg), TextPayload::Tokens(s)) => {
            if w.lambda2 > 0.0 {
                let mut total: Option<Tensor> = None;
                for (row, &t) in texts.iter().enumerate() {
                    let z = rec.slice(&enc.zt, 0, row, row + 1)?;
                    let mask: Vec<bool> = (0..s[t].len())
                        .map(|m| m > 0 && rng.random::<f64>() < cfg.word_dropout_rate)
                        .collect();
                    let nll = gru_decode_nll(rec, &z, &s[t], params, &mask)?;
                    total = Some(match total {
                        Some(acc) => rec.add(&acc, &nll)?,
                        None => nll,
                    });
                }
                let total = total.expect("batch has texts");
                TextReconstruction::SentenceNll(rec.scale(&total, 1.0 / texts.len() as f64)?)
            } else {
                TextReconstruction::SentenceNll(Tensor::scalar(0.0))
            }
        }
        _ => {
            return Err(TrainError::InvalidConfig(
                "text payload kind does not match the text encoder".into(),
            ))
        }
    };
    Ok(BatchForward {
        image_inputs: x,
        image_outputs,
        text,
        encoded: LatentBatchPair::new(enc.zv, enc.zt, paired)?,
        kl: enc.kl,
    })
}

fn collect_grads(
    rec: &Recording,
    loss: &Tensor,
    registered: &ModelParams,
    names: &[String],
    clip: Option<f64>,
) -> Result<BTreeMap<String, Tensor>, TrainError> {
    let grads = rec.backward(loss)?;
    let mut out = BTreeMap::new();
    for n in names {
        let g = grads
            .get(registered.get(n)?)
            .ok_or_else(|| TrainError::MissingGradient(n.clone()))?;
        out.insert(n.clone(), g.clone());
    }
    if let Some(max_norm) = clip {
        let norm = out
            .values()
            .flat_map(|g| g.values().iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            for g in out.values_mut() {
                let scaled = g.values().iter().map(|x| x * s).collect();
                *g = Tensor::new(g.shape().to_vec(), scaled)?;
            }
        }
    }
    Ok(out)
}

/// One optimization step: `disc_steps_per_gen_step` discriminator updates
/// against fresh prior draws, then one encoder/decoder update.
pub fn train_step(
    state: &mut TrainState,
    model: &ModelConfig,
    config: &TrainConfig,
    dataset: &Dataset,
    batch: &Batch,
) -> Result<LossTerms, TrainError> {
    if config.weights.supervision == Supervision::MaxMargin && batch.pairs.len() < 2 {
        return Err(TrainError::TooFewPairs(batch.pairs.len()));
    }
    let disc_names: Vec<String> = state.params.names().filter(|n| is_discriminator_param(n)).cloned().collect();
    let main_names: Vec<String> = state.params.names().filter(|n| !is_discriminator_param(n)).cloned().collect();

    let mut disc_loss = 0.0;
    if config.weights.uses_discriminator() {
        let (images, texts, paired) = batch_rows(batch);
        let mut frozen = Recording::inactive();
        let (_, enc) = encode(&mut frozen, &state.params, model, dataset, &images, &texts, &mut state.rng)?;
        let latents = LatentBatchPair::new(enc.zv, enc.zt, paired)?;
        let n = images.len() + texts.len();
        let adam = config.adam(config.lr_disc);
        for _ in 0..config.disc_steps_per_gen_step {
            let prior = normal(&mut state.rng, n, model.latent_dim())?;
            let mut rec = Recording::new();
            let reg = state.params.register(&mut rec, is_discriminator_param);
            let loss = gan_discriminator_loss(&mut rec, &prior, &latents, &reg)?;
            disc_loss += loss.item();
            let grads = collect_grads(&rec, &loss, &reg, &disc_names, None)?;
            adam_step(&mut state.params, &disc_names, &grads, &mut state.opt_disc, &adam)?;
        }
        disc_loss /= config.disc_steps_per_gen_step as f64;
    }

    let mut rec = Recording::new();
    let reg = state.params.register(&mut rec, |n| !is_discriminator_param(n));
    let fwd = forward_batch(&mut rec, &reg, model, config, dataset, batch, &mut state.rng)?;
    let total = jwae_total_loss(&mut rec, &fwd, &config.weights, &reg, None)?;
    let mut terms = total.terms;
    terms.discriminator = disc_loss;
    if !terms.generator.is_finite() {
        return Err(TrainError::Diverged(terms.generator));
    }
    let grads = collect_grads(&rec, &total.generator, &reg, &main_names, config.effective_clip(model))?;
    let adam = config.adam(config.lr_main);
    adam_step(&mut state.params, &main_names, &grads, &mut state.opt_main, &adam)?;
    Ok(terms)
}
