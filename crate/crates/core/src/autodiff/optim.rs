use serde::{Deserialize, Serialize};

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
            ..Self::adam(learning_rate)
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        Ok(())
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

/// Optimizer hyperparameters plus per-parameter Adam moments.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    step: u64,
    first_moment: ParamSet,
    second_moment: ParamSet,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            first_moment: ParamSet::new(),
            second_moment: ParamSet::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Applies one update for every parameter that has a gradient in `grads`.
/// Parameters without a gradient entry are left untouched. A NaN anywhere in
/// `grads` rejects the whole update before any parameter changes.
pub fn apply_update(params: &mut ParamSet, grads: &ParamSet, state: &mut OptimizerState) -> Result<()> {
    for (name, g) in grads.iter() {
        if g.data().iter().any(|v| v.is_nan()) {
            return Err(Error::NanGradient(name.to_string()));
        }
        match params.get(name) {
            Some(p) if p.shape() == g.shape() => {}
            Some(p) => {
                return Err(Error::config(format!(
                    "gradient shape {:?} does not match parameter `{name}` {:?}",
                    g.shape(),
                    p.shape()
                )))
            }
            None => return Err(Error::MissingParameter(name.to_string())),
        }
    }
    state.step += 1;
    let cfg = state.config;
    let lr = cfg.learning_rate;
    match cfg.kind {
        OptimizerKind::Sgd => {
            for (name, g) in grads.iter() {
                let p = params.get_mut(name).expect("checked");
                for (pi, gi) in p.data_mut().iter_mut().zip(g.data()) {
                    *pi -= lr * gi;
                }
            }
        }
        OptimizerKind::Adam => {
            let t = state.step as i32;
            let bc1 = 1.0 - cfg.beta1.powi(t);
            let bc2 = 1.0 - cfg.beta2.powi(t);
            for (name, g) in grads.iter() {
                if !state.first_moment.contains(name) {
                    state.first_moment.insert(name, super::Tensor::zeros(g.shape()));
                    state.second_moment.insert(name, super::Tensor::zeros(g.shape()));
                }
                let m = state.first_moment.get_mut(name).expect("inserted");
                let v = state.second_moment.get_mut(name).expect("inserted");
                let p = params.get_mut(name).expect("checked");
                for (((pi, gi), mi), vi) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut().iter_mut())
                    .zip(v.data_mut().iter_mut())
                {
                    *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                    *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                    let mhat = *mi / bc1;
                    let vhat = *vi / bc2;
                    *pi -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
                }
            }
        }
    }
    Ok(())
}
