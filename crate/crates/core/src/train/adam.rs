use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers mirroring a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
    lr_scale: Vec<f64>,
    /// Reject steps with non-finite gradients.
    pub checked: bool,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let m: Vec<Vec<T>> = store.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self {
            config,
            v: m.clone(),
            m,
            step: 0,
            lr_scale: vec![1.0; store.len()],
            checked: false,
        }
    }

    /// Multiply the learning rate of one parameter by `scale`.
    pub fn set_lr_scale(&mut self, id: ParamId, scale: f64) {
        self.lr_scale[id.index()] = scale;
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every parameter in `ids` (all when `None`).
    pub fn step(
        &mut self,
        store: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
        ids: Option<&[ParamId]>,
    ) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::invalid("gradient count does not match parameter count"));
        }
        let all: Vec<ParamId>;
        let ids = match ids {
            Some(ids) => ids,
            None => {
                all = store.ids().collect();
                &all
            }
        };
        for &id in ids {
            let g = &grads[id.index()];
            if g.shape() != store.get(id).shape() {
                return Err(Error::Shape {
                    op: "adam",
                    lhs: store.get(id).shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if self.checked && !g.all_finite() {
                return Err(Error::NonFinite("adam gradient"));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let bc2_sqrt = T::lit(bc2.sqrt());
        let eps = T::lit(eps);
        for &id in ids {
            let g = grads[id.index()].data();
            let step_size = T::lit(lr * self.lr_scale[id.index()] / bc1);
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let mut p = store.get(id).to_vec();
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                p[i] = p[i] - step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
            store.set(id, Tensor::new(store.get(id).shape().to_vec(), p)?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let (mut s, id) = scalar_store(1.25);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &[Tensor::scalar(0.0)], 0.1, None).unwrap();
        assert_eq!(s.get(id).item().unwrap(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &[Tensor::scalar(3.7)], 0.01, None).unwrap();
        assert!((s.get(id).item().unwrap() + 0.01).abs() < 1e-8);
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let (mut s, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..2000 {
            let w = s.get(id).item().unwrap();
            adam.step(&mut s, &[Tensor::scalar(2.0 * (w - 3.0))], 0.01, None).unwrap();
        }
        assert!((s.get(id).item().unwrap() - 3.0).abs() < 1e-3);
    }

    #[test]
    fn checked_mode_rejects_nan_gradient() {
        let (mut s, id) = scalar_store(1.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.checked = true;
        assert!(adam.step(&mut s, &[Tensor::scalar(f64::NAN)], 0.1, None).is_err());
        assert_eq!(s.get(id).item().unwrap(), 1.0);
        assert_eq!(adam.step_count(), 0);
    }
}
