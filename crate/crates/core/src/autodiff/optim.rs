use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::{Grads, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
struct Moments {
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Parameters without a gradient in a step are
/// left untouched, including their moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        if !(config.lr > 0.0) || !config.lr.is_finite() {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", config.lr)));
        }
        if !(0.0..1.0).contains(&config.beta1) || !(0.0..1.0).contains(&config.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(config.eps > 0.0) {
            return Err(Error::Config("Adam eps must be > 0".into()));
        }
        Ok(Self {
            config,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> AdamConfig {
        self.config
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        self.config.lr = lr;
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Grads) -> Result<()> {
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.numel() != g.len() {
                return Err(Error::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
            let st = self.state.entry(name.clone()).or_insert_with(|| Moments {
                step: 0,
                m: vec![0.0; g.len()],
                v: vec![0.0; g.len()],
            });
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn one(value: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::scalar(value));
        p
    }

    #[test]
    fn rejects_non_positive_lr() {
        for lr in [0.0, -1e-3, f64::NAN] {
            let cfg = AdamConfig { lr, ..AdamConfig::default() };
            assert!(matches!(Adam::new(cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = one(0.7);
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g: Grads = [("w".to_string(), vec![0.0])].into();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 1, v̂ = 1 after bias correction, so Δ = lr / (1 + eps)
        let mut p = one(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut opt = Adam::new(cfg).unwrap();
        let g: Grads = [("w".to_string(), vec![1.0])].into();
        opt.step(&mut p, &g).unwrap();
        let want = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get("w").unwrap().item() - want).abs() < 1e-15);
    }

    #[test]
    fn repeated_runs_are_bitwise_identical() {
        let run = || {
            let mut p = one(0.25);
            let mut opt = Adam::new(AdamConfig::default()).unwrap();
            for k in 0..2 {
                let g: Grads = [("w".to_string(), vec![0.3 - 0.1 * k as f64])].into();
                opt.step(&mut p, &g).unwrap();
            }
            p.get("w").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn absent_gradients_skip_parameter() {
        let mut p = one(2.0);
        p.insert("u", Tensor::scalar(5.0));
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        let g: Grads = [("w".to_string(), vec![1.0])].into();
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.get("u").unwrap().item(), 5.0);
    }
}
