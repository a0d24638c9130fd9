//! AdaBound: Adam whose per-element step size is clipped into a band that
//! narrows toward `final_lr`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaBoundConfig {
    pub lr: f64,
    pub final_lr: f64,
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Replaces both bounds with a constant, turning the update into SGD
    /// with (bias-corrected) momentum.
    pub pinned_rate: Option<f64>,
}

impl Default for AdaBoundConfig {
    fn default() -> Self {
        Self { lr: 1e-3, final_lr: 0.01, gamma: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, pinned_rate: None }
    }
}

impl AdaBoundConfig {
    /// `(eta_l(t), eta_u(t))` for step `t >= 1`.
    pub fn bounds(&self, t: u64) -> (f64, f64) {
        if let Some(c) = self.pinned_rate {
            return (c, c);
        }
        let gt = self.gamma * t as f64;
        (self.final_lr * (1.0 - 1.0 / (gt + 1.0)), self.final_lr * (1.0 + 1.0 / gt))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaBoundState {
    pub config: AdaBoundConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Smallest and largest per-element rate applied by the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub min_rate: f64,
    pub max_rate: f64,
}

impl AdaBoundState {
    pub fn new(config: AdaBoundConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every parameter tensor in place.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<StepStats> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return domain("optimizer tensor count mismatch");
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return domain("optimizer tensor shape mismatch");
            }
        }
        let c = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (lo, hi) = c.bounds(self.t);
        let mut stats = StepStats { min_rate: f64::INFINITY, max_rate: f64::NEG_INFINITY };
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for i in 0..p.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let rate = (c.lr / (vhat.sqrt() + c.eps)).clamp(lo, hi);
                stats.min_rate = stats.min_rate.min(rate);
                stats.max_rate = stats.max_rate.max(rate);
                p[i] -= rate * mhat;
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_bounds() {
        let c = AdaBoundConfig::default();
        let (lo, hi) = c.bounds(1);
        assert!((lo - 0.01 * (1.0 - 1.0 / 1.001)).abs() < 1e-18);
        assert!((hi - 0.01 * 1001.0).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_first_step_is_a_no_op() {
        let mut st = AdaBoundState::new(AdaBoundConfig::default(), &[3]);
        let mut p = vec![1.0, -2.0, 3.0];
        st.step(&mut [&mut p[..]], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut st = AdaBoundState::new(AdaBoundConfig::default(), &[3]);
        let mut p = vec![0.0; 2];
        assert!(st.step(&mut [&mut p[..]], &[vec![0.0; 2]]).is_err());
    }
}
