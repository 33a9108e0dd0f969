//! Adam with bias correction.

use crate::error::{Error, Result};

use super::losses::{FrameParams, Gradient};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        Self {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update of `params` in place.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Dimension {
                expected: self.m.len(),
                got: if params.len() != self.m.len() { params.len() } else { grad.len() },
            });
        }
        if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient component {bad}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Adam step over a frame's weights and pose; the quaternion is
/// re-normalized afterwards.
pub fn adam_step(state: &mut AdamState, params: &mut FrameParams, grad: &Gradient, lr: f64) -> Result<()> {
    let mut flat = params.to_vec();
    state.update(&mut flat, &grad.to_vec(), lr)?;
    params.set_from(&flat);
    let n = params.pose.rotation.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Numeric(format!("quaternion norm {n} after update")));
    }
    params.pose.rotation /= n;
    Ok(())
}
