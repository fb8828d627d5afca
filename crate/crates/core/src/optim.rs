//! Adam with global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::params::Parameters;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, clip_norm: Some(1.0) }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("adam eps must be > 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config("train.clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    m: Parameters,
    v: Parameters,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &Parameters) -> Self {
        Self { config, m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut Parameters, grads: &Parameters) -> Result<f64> {
        let norm = grads.global_norm();
        if !norm.is_finite() {
            return Err(Error::NonFinite);
        }
        let clip = match self.config.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((name, p), ((_, m), (_, v))) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let g = grads.get(name)?;
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                let g = g * clip;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            });
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameters::new();
        p.insert("w", array![[1.0, -2.0]]);
        let mut g = Parameters::new();
        g.insert("w", array![[0.5, -0.1]]);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, clip_norm: None, ..Default::default() }, &p);
        opt.step(&mut p, &g).unwrap();
        let w = p.get("w").unwrap();
        assert!((w[[0, 0]] - 0.9).abs() < 1e-6);
        assert!((w[[0, 1]] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn minimises_quadratic() {
        let mut p = Parameters::new();
        p.insert("w", array![[3.0, -4.0]]);
        let mut opt = Adam::new(AdamConfig { lr: 0.05, ..Default::default() }, &p);
        for _ in 0..2000 {
            let mut g = Parameters::new();
            g.insert("w", p.get("w").unwrap() * 2.0);
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p.global_norm() < 1e-2);
    }

    #[test]
    fn rejects_non_finite_gradients() {
        let mut p = Parameters::new();
        p.insert("w", array![[1.0]]);
        let mut g = Parameters::new();
        g.insert("w", array![[f64::NAN]]);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        assert!(matches!(opt.step(&mut p, &g), Err(Error::NonFinite)));
        assert!(AdamConfig { lr: 0.0, ..Default::default() }.validate().is_err());
    }
}
