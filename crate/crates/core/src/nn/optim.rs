use serde::{Deserialize, Serialize};

use super::mlp::ParamMut;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd { momentum: f64 },
}

/// Optimizer hyperparameters with a multi-step learning-rate schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// L2 penalty `λ‖W‖²` on weight matrices.
    #[serde(default)]
    pub weight_decay: f64,
    /// Epochs at which the learning rate is multiplied by `decay_rate`.
    #[serde(default)]
    pub milestones: Vec<usize>,
    #[serde(default = "one")]
    pub decay_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl OptimizerConfig {
    pub fn adam(learning_rate: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 },
            learning_rate,
            weight_decay,
            milestones: Vec::new(),
            decay_rate: 1.0,
        }
    }

    pub fn sgd(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd { momentum },
            learning_rate,
            weight_decay,
            milestones: Vec::new(),
            decay_rate: 1.0,
        }
    }

    pub fn with_schedule(mut self, milestones: &[usize], decay_rate: f64) -> Self {
        self.milestones = milestones.to_vec();
        self.decay_rate = decay_rate;
        self
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.learning_rate * self.decay_rate.powi(passed as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.decay_rate > 0.0) {
            return Err(Error::arg("learning rate, weight decay and decay rate must be nonnegative"));
        }
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                    return Err(Error::arg("invalid Adam moments"));
                }
            }
            OptimizerKind::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::arg("momentum outside [0, 1)"));
                }
            }
        }
        Ok(())
    }
}

/// Stateful first-order optimizer over an ordered list of parameter slots.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    steps: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer { config, steps: 0, first: Vec::new(), second: Vec::new() })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Applies one update. `grads[i]` must match `params[i]` in length; slot
    /// order must be the same on every call.
    pub fn step(&mut self, params: Vec<ParamMut<'_>>, grads: &[Vec<f64>], learning_rate: f64) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::shape(format!("{} parameter slots, {} gradients", params.len(), grads.len())));
        }
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != grads.len() {
            return Err(Error::shape("parameter slot count changed between steps"));
        }
        self.steps += 1;
        let wd2 = 2.0 * self.config.weight_decay;
        let t = self.steps as i32;
        for (slot, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.values.len() != g.len() || self.first[slot].len() != g.len() {
                return Err(Error::shape(format!("slot {slot} size mismatch")));
            }
            let decay = if p.decay { wd2 } else { 0.0 };
            match self.config.kind {
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let m = &mut self.first[slot];
                    let v = &mut self.second[slot];
                    for i in 0..g.len() {
                        let gi = g[i] + decay * p.values[i];
                        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p.values[i] -= learning_rate * mh / (vh.sqrt() + eps);
                    }
                }
                OptimizerKind::Sgd { momentum } => {
                    let buf = &mut self.first[slot];
                    for i in 0..g.len() {
                        let gi = g[i] + decay * p.values[i];
                        buf[i] = momentum * buf[i] + gi;
                        p.values[i] -= learning_rate * buf[i];
                    }
                }
            }
        }
        Ok(())
    }
}
