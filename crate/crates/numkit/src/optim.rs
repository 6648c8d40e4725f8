//! AdamW with decoupled weight decay.
//!
//! Per step `t` and parameter `p` with gradient `g`:
//!
//! ```text
//! p ← p − lr·λ·p
//! m ← β₁m + (1 − β₁)g
//! v ← β₂v + (1 − β₂)g²
//! p ← p − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use crate::error::{NumError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

/// Optimizer state: one pair of moment buffers per parameter.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        AdamW {
            config,
            v: m.clone(),
            m,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// Applies one update using the gradients held in `store`. Missing
    /// gradients count as zero. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(NumError::contract(
                "adamw",
                format!("state tracks {} parameters, store has {}", self.m.len(), store.len()),
            ));
        }
        for (_, name, t) in store.iter() {
            if let Some(g) = t.grad() {
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(NumError::NonFinite {
                        context: format!("gradient of parameter {name:?} at element {pos} ({})", g[pos]),
                    });
                }
            }
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let t = store.get_mut(id);
            if !t.requires_grad() {
                continue;
            }
            let grad = t.grad().map(<[f64]>::to_vec);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                *p -= lr * weight_decay * *p;
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    fn scalar_store(p: f64, g: Option<f64>) -> ParamStore {
        let mut store = ParamStore::new();
        let id = store.insert("p", Tensor::new(vec![1], vec![p]).unwrap()).unwrap();
        if let Some(g) = g {
            store.get_mut(id).accumulate_grad(&[g]).unwrap();
        }
        store
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let mut store = scalar_store(0.37, Some(0.0));
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get(store.id("p").unwrap()).data(), &[0.37]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn single_step_hand_evaluated() {
        // m̂ = 1, v̂ = 1 after bias correction ⇒ p = 1 − 0.1·1/(1 + 1e-8)
        let mut store = scalar_store(1.0, Some(1.0));
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store).unwrap();
        let p = store.get(store.id("p").unwrap()).data()[0];
        assert!((p - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p - 0.9).abs() < 1e-7);
    }

    #[test]
    fn decoupled_decay_with_zero_grad() {
        let mut store = scalar_store(2.0, None);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store).unwrap();
        let p = store.get(store.id("p").unwrap()).data()[0];
        assert!((p - 2.0 * (1.0 - 0.01)).abs() < 1e-15);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut store = scalar_store(1.0, Some(f64::NAN));
        let mut opt = AdamW::new(AdamWConfig::default(), &store);
        let err = opt.step(&mut store).unwrap_err();
        assert!(err.to_string().contains("\"p\""), "{err}");
        assert_eq!(opt.step_count(), 0);
        assert_eq!(store.get(store.id("p").unwrap()).data(), &[1.0]);
    }

    #[test]
    fn moments_start_at_zero() {
        let store = scalar_store(1.0, None);
        let opt = AdamW::new(AdamWConfig::default(), &store);
        assert_eq!(opt.first_moment(0), &[0.0]);
        assert_eq!(opt.second_moment(0), &[0.0]);
    }
}
