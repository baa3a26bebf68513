use std::fs;
use std::path::{Path, PathBuf};

use jwae::data::{Dataset, Split, SynthConfig, TextPayload};
use jwae::nets::{DiscriminatorConfig, GruConfig, MlpConfig, ModelConfig, TextEncoderConfig};
use jwae::objectives::{LossWeights, Objective};
use jwae::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Everything a command reads, as one TOML document. Paths are relative to
/// the file they appear in.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<Objective>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Shifted dataset for `cross-eval`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub localization: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ks: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    /// Items per modality encoded by `diagnose`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnose_cap: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    /// Any [`TrainConfig`] field; `weights` defaults to the preset of `loss`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<toml::Table>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
}

pub const DEFAULT_LOSS: Objective = Objective::JwaeMh;
pub const DEFAULT_DIAGNOSE_CAP: usize = 1000;

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.dataset, &mut cfg.target, &mut cfg.localization, &mut cfg.checkpoint]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn to_toml(&self) -> Result<String, Failure> {
        toml::to_string(self).map_err(|e| Failure::Config(format!("cannot serialize resolved config: {e}")))
    }

    /// The training section with `weights`, `seed` and the loss resolved.
    pub fn train_config(&self) -> Result<TrainConfig, Failure> {
        let loss = self.loss.unwrap_or(DEFAULT_LOSS);
        let mut table = self.train.clone().unwrap_or_default();
        if self.loss.is_some() || !table.contains_key("weights") {
            let weights = toml::Table::try_from(LossWeights::preset(loss))
                .map_err(|e| Failure::Config(format!("loss preset {loss}: {e}")))?;
            table.insert("weights".into(), weights.into());
        }
        table.insert("seed".into(), toml::Value::Integer(self.seed() as i64));
        let cfg: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Failure::Config(format!("[train]: {e}")))?;
        cfg.validate().map_err(|e| Failure::Config(format!("[train]: {e}")))?;
        Ok(cfg)
    }

    pub fn set_train(&mut self, cfg: &TrainConfig) -> Result<(), Failure> {
        let table =
            toml::Table::try_from(cfg).map_err(|e| Failure::Config(format!("cannot serialize [train]: {e}")))?;
        self.train = Some(table);
        Ok(())
    }

    pub fn synth_config(&self) -> Result<SynthConfig, Failure> {
        let mut cfg = self.synth.clone().unwrap_or_default();
        cfg.seed = self.seed();
        cfg.validate().map_err(|e| Failure::Config(format!("[synth]: {e}")))?;
        Ok(cfg)
    }

    /// `[model]`, or the default architecture sized to `dataset`.
    pub fn model_config(&self, dataset: &Dataset, variational: bool) -> Result<ModelConfig, Failure> {
        let model = match &self.model {
            Some(m) => m.clone(),
            None => default_model(dataset)?,
        };
        model.validate().map_err(|e| Failure::Config(format!("[model]: {e}")))?;
        if model.variational != variational {
            return Err(Failure::Config(format!(
                "[model] variational = {} does not fit loss {}",
                model.variational,
                self.loss.unwrap_or(DEFAULT_LOSS)
            )));
        }
        Ok(model)
    }

    pub fn ks(&self) -> Vec<usize> {
        self.ks.clone().unwrap_or_else(|| jwae::eval::DEFAULT_KS.to_vec())
    }
}

pub const DEFAULT_LATENT: usize = 256;
pub const DEFAULT_IMAGE_HIDDEN: usize = 2048;
pub const DEFAULT_TEXT_HIDDEN: usize = 1024;
pub const DEFAULT_DISC: [usize; 3] = [256, 256, 2];

fn default_model(dataset: &Dataset) -> Result<ModelConfig, Failure> {
    let d = DEFAULT_LATENT;
    let text = match &dataset.text {
        TextPayload::Features(m) => TextEncoderConfig::Features(MlpConfig {
            input_dim: m.cols(),
            hidden_dim: DEFAULT_TEXT_HIDDEN,
            latent_dim: d,
        }),
        TextPayload::Tokens(_) => {
            let vocab = dataset
                .vocab
                .as_ref()
                .ok_or_else(|| Failure::Input("token dataset carries no vocabulary".into()))?;
            TextEncoderConfig::Gru(GruConfig {
                vocab_size: vocab.len(),
                embed_dim: 300,
                hidden_dim: DEFAULT_TEXT_HIDDEN,
                encoder_fc_dim: 1800,
                latent_dim: d,
                word_dropout_rate: 0.2,
                num_layers: 1,
            })
        }
    };
    Ok(ModelConfig {
        image: MlpConfig {
            input_dim: dataset.image_dim(),
            hidden_dim: DEFAULT_IMAGE_HIDDEN,
            latent_dim: d,
        },
        text,
        discriminator: DiscriminatorConfig {
            latent_dim: d,
            layer_dims: DEFAULT_DISC,
        },
        variational: false,
    })
}
