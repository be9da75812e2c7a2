use rand::Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::model::{MiniBatch, ModelSpec};
use crate::error::{Error, Result};
use crate::param::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub local_steps: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for LocalOptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            local_steps: 20,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl LocalOptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and nonnegative"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.kind == OptimizerKind::Adam {
            if !(0.0..1.0).contains(&self.beta1) {
                return Err(Error::config("adam_beta1", "must lie in [0, 1)"));
            }
            if !(0.0..1.0).contains(&self.beta2) {
                return Err(Error::config("adam_beta2", "must lie in [0, 1)"));
            }
            if self.epsilon <= 0.0 {
                return Err(Error::config("adam_epsilon", "must be positive"));
            }
        }
        Ok(())
    }
}

/// Draws `size` row indices uniformly with replacement.
pub fn sample_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    (0..size).map(|_| rng.random_range(0..n)).collect()
}

/// Runs `cfg.local_steps` mini-batch steps from `w0`. Adam moments start from
/// zero on every call. The batch size is capped at the local sample count.
pub fn run_local_iterations<R: Rng + ?Sized>(
    model: &ModelSpec,
    w0: &ParamVector,
    cfg: &LocalOptimizerConfig,
    data: &Dataset,
    rng: &mut R,
) -> Result<ParamVector> {
    cfg.validate()?;
    w0.check_len(model.num_params())?;
    if data.is_empty() {
        return Err(Error::contract("local dataset is empty"));
    }
    let batch_size = cfg.batch_size.min(data.len());
    let mut w = w0.clone();
    let d = w.len();
    let (mut m, mut v) = match cfg.kind {
        OptimizerKind::Adam => (vec![0.0; d], vec![0.0; d]),
        OptimizerKind::Sgd => (Vec::new(), Vec::new()),
    };
    let mut b1t = 1.0;
    let mut b2t = 1.0;

    for t in 0..cfg.local_steps {
        let idx = sample_batch(data.len(), batch_size, rng);
        let grad = model.backward_grad(&w, &MiniBatch::new(data, &idx))?;
        let lr = cfg.learning_rate;
        match cfg.kind {
            OptimizerKind::Sgd => {
                for (wi, gi) in w.as_mut_slice().iter_mut().zip(grad.iter()) {
                    *wi -= lr * gi;
                }
            }
            OptimizerKind::Adam => {
                b1t *= cfg.beta1;
                b2t *= cfg.beta2;
                for i in 0..d {
                    let g = grad[i];
                    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                    let m_hat = m[i] / (1.0 - b1t);
                    let v_hat = v[i] / (1.0 - b2t);
                    w[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
                }
            }
        }
        if !w.is_finite() {
            return Err(Error::Diverged {
                iteration: t,
                worker: None,
            });
        }
    }
    Ok(w)
}
