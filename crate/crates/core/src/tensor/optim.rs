use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates, one slot per parameter tensor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. A `None` gradient counts as zero.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Option<&[f64]>],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.len()
        )));
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.m.len() != params.len()
        || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::State("optimizer state does not match parameter layout".into()));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.len() {
                return Err(Error::Dimension("gradient length differs from parameter".into()));
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = p.data_mut();
        for k in 0..data.len() {
            let gk = grads[i].map_or(0.0, |g| g[k]);
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            data[k] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}
