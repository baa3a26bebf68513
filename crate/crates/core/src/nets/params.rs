use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, NetError, TextEncoderConfig};
use crate::autodiff::{Recording, Tensor};

/// Named parameter tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NetError> {
        self.tensors
            .get(name)
            .ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Copy in which parameters selected by `trainable` are leaves of `rec`
    /// and all others are detached constants.
    pub fn register(&self, rec: &mut Recording, trainable: impl Fn(&str) -> bool) -> ModelParams {
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let t = if trainable(name) { rec.leaf(t) } else { t.detach() };
                (name.clone(), t)
            })
            .collect();
        ModelParams { tensors }
    }

    pub fn detached(&self) -> ModelParams {
        let tensors = self
            .tensors
            .iter()
            .map(|(n, t)| (n.clone(), t.detach()))
            .collect();
        ModelParams { tensors }
    }

    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((na, a), (nb, b))| na == nb && a.bit_eq(b))
    }

    /// Checks that exactly the parameters `config` expects are present with
    /// matching shapes.
    pub fn validate(&self, config: &ModelConfig) -> Result<(), NetError> {
        let expected = param_shapes(config);
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(NetError::InvalidConfig(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        if let Some(extra) = self.tensors.keys().find(|n| !expected.contains_key(*n)) {
            return Err(NetError::InvalidConfig(format!("unexpected parameter `{extra}`")));
        }
        Ok(())
    }
}

fn linear(shapes: &mut BTreeMap<String, Vec<usize>>, prefix: &str, fan_in: usize, fan_out: usize) {
    shapes.insert(format!("{prefix}.weight"), vec![fan_in, fan_out]);
    shapes.insert(format!("{prefix}.bias"), vec![fan_out]);
}

fn gru_block(shapes: &mut BTreeMap<String, Vec<usize>>, prefix: &str, input: usize, hidden: usize) {
    for gate in ["z", "r", "h"] {
        shapes.insert(format!("{prefix}.w_{gate}"), vec![input, hidden]);
        shapes.insert(format!("{prefix}.u_{gate}"), vec![hidden, hidden]);
        shapes.insert(format!("{prefix}.b_{gate}"), vec![hidden]);
    }
}

/// Every parameter the configured model owns, with its shape.
pub fn param_shapes(config: &ModelConfig) -> BTreeMap<String, Vec<usize>> {
    let mut s = BTreeMap::new();
    let d = config.latent_dim();
    let img = &config.image;
    linear(&mut s, "enc_v.layer1", img.input_dim, img.hidden_dim);
    linear(&mut s, "enc_v.layer2", img.hidden_dim, d);
    linear(&mut s, "dec_v.layer1", d, img.hidden_dim);
    linear(&mut s, "dec_v.layer2", img.hidden_dim, img.input_dim);
    if config.variational {
        linear(&mut s, "enc_v.logvar", img.hidden_dim, d);
    }
    match &config.text {
        TextEncoderConfig::Features(txt) => {
            linear(&mut s, "enc_t.layer1", txt.input_dim, txt.hidden_dim);
            linear(&mut s, "enc_t.layer2", txt.hidden_dim, d);
            linear(&mut s, "dec_t.layer1", d, txt.hidden_dim);
            linear(&mut s, "dec_t.layer2", txt.hidden_dim, txt.input_dim);
            if config.variational {
                linear(&mut s, "enc_t.logvar", txt.hidden_dim, d);
            }
        }
        TextEncoderConfig::Gru(g) => {
            s.insert("enc_t.embed.weight".into(), vec![g.vocab_size, g.embed_dim]);
            for layer in 0..g.num_layers {
                let input = if layer == 0 { g.embed_dim } else { 2 * g.hidden_dim };
                gru_block(&mut s, &format!("enc_t.gru{layer}.fwd"), input, g.hidden_dim);
                gru_block(&mut s, &format!("enc_t.gru{layer}.bwd"), input, g.hidden_dim);
            }
            linear(&mut s, "enc_t.fc", 2 * g.hidden_dim, g.encoder_fc_dim);
            linear(&mut s, "enc_t.latent", g.encoder_fc_dim, d);
            if config.variational {
                linear(&mut s, "enc_t.logvar", g.encoder_fc_dim, d);
            }
            s.insert("dec_t.embed.weight".into(), vec![g.vocab_size, g.embed_dim]);
            linear(&mut s, "dec_t.init", d, g.hidden_dim);
            gru_block(&mut s, "dec_t.gru", g.embed_dim, g.hidden_dim);
            linear(&mut s, "dec_t.out", g.hidden_dim, g.vocab_size);
        }
    }
    let [l1, l2, l3] = config.discriminator.layer_dims;
    linear(&mut s, "disc.layer1", d, l1);
    linear(&mut s, "disc.layer2", l1, l2);
    linear(&mut s, "disc.layer3", l2, l3);
    s
}

/// Glorot-uniform weights, zero biases. Parameters are drawn in name order
/// from one ChaCha stream, so a seed fixes every value.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams, NetError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for (name, shape) in param_shapes(config) {
        let n: usize = shape.iter().product();
        let values = if shape.len() == 2 {
            let bound = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        } else {
            vec![0.0; n]
        };
        params.insert(name, Tensor::new(shape, values)?);
    }
    Ok(params)
}
