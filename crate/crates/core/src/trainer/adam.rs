use std::collections::BTreeMap;

use super::TrainError;
use crate::autodiff::Tensor;
use crate::nets::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments per parameter name plus the step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bit_eq(&self, other: &OptimizerState) -> bool {
        let same = |a: &BTreeMap<String, Vec<f64>>, b: &BTreeMap<String, Vec<f64>>| {
            a.len() == b.len()
                && a.iter().zip(b).all(|((na, va), (nb, vb))| {
                    na == nb && va.len() == vb.len() && va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits())
                })
        };
        self.step == other.step && same(&self.m, &other.m) && same(&self.v, &other.v)
    }
}

/// One bias-corrected Adam update of the parameters named in `names`.
pub fn adam_step(
    params: &mut ModelParams,
    names: &[String],
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    for name in names {
        let g = grads.get(name).ok_or_else(|| TrainError::MissingGradient(name.clone()))?;
        let p = params.get(name)?;
        if g.shape() != p.shape() {
            return Err(TrainError::GradientShape {
                name: name.clone(),
                param: p.shape().to_vec(),
                grad: g.shape().to_vec(),
            });
        }
        for moments in [&state.m, &state.v] {
            if moments.get(name).is_some_and(|m| m.len() != p.len()) {
                return Err(TrainError::GradientShape {
                    name: name.clone(),
                    param: p.shape().to_vec(),
                    grad: vec![moments[name].len()],
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - cfg.beta1.powf(t);
    let c2 = 1.0 - cfg.beta2.powf(t);
    for name in names {
        let g = grads[name].values();
        let p = params.get(name)?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let mut out = p.to_vec();
        for i in 0..g.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            out[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        let shape = p.shape().to_vec();
        params.insert(name.clone(), Tensor::new(shape, out)?);
    }
    Ok(())
}
