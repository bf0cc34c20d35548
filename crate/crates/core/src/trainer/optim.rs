use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate: 0.01,
            clip_norm: Some(5.0),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| c <= 0.0 || !c.is_finite()) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return Err(Error::Config("need 0 <= beta < 1 and epsilon > 0".into()));
        }
        Ok(())
    }
}

/// Gradient descent with optional clipping and Adam moments.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, params: &ParamStore) -> Result<Self> {
        config.validate()?;
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Ok(Optimizer { config, m: zeros.clone(), v: zeros, t: 0 })
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut Gradients) -> Result<f64> {
        if !grads.is_finite() {
            return Err(Error::NonFinite { op: "gradient" });
        }
        let norm = grads.l2_norm();
        if let Some(clip) = self.config.clip_norm {
            if norm > clip {
                grads.scale(clip / norm);
            }
        }
        self.t += 1;
        let c = &self.config;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id);
            let values = params.get_mut(id).values_mut();
            match c.kind {
                OptimizerKind::Sgd => {
                    for (w, gi) in values.iter_mut().zip(g) {
                        *w -= c.learning_rate * gi;
                    }
                }
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[id.index()], &mut self.v[id.index()]);
                    let bc1 = 1.0 - c.beta1.powi(self.t as i32);
                    let bc2 = 1.0 - c.beta2.powi(self.t as i32);
                    for i in 0..values.len() {
                        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                        values[i] -= c.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + c.epsilon);
                    }
                }
            }
        }
        Ok(norm)
    }
}
