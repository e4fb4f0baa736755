use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied after the moment update as `θ ← θ − η·λ·θ`.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Data(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if g.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
            if let Some(index) = g.data().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("gradient of {}", p.name),
                    index,
                });
            }
        }
        self.t += 1;
        let cfg = self.config;
        let t = self.t as i32;
        let bc1 = 1.0 - Float::powi(cfg.beta1, t);
        let bc2 = 1.0 - Float::powi(cfg.beta2, t);
        let (b1, b2) = (T::from_f64(cfg.beta1), T::from_f64(cfg.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - cfg.beta1), T::from_f64(1.0 - cfg.beta2));
        let (inv_bc1, inv_bc2) = (T::from_f64(1.0 / bc1), T::from_f64(1.0 / bc2));
        let eps = T::from_f64(cfg.eps);
        let eta = T::from_f64(lr);
        let decay = T::from_f64(lr * cfg.weight_decay);
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (j, theta) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let m_hat = m[j] * inv_bc1;
                let v_hat = v[j] * inv_bc2;
                *theta = *theta - eta * m_hat / (v_hat.sqrt() + eps);
                if cfg.weight_decay != 0.0 {
                    *theta = *theta - decay * *theta;
                }
            }
        }
        Ok(())
    }

    /// Moment tensors named `adam.m.<param>` / `adam.v.<param>`.
    pub fn export(&self, params: &ParamSet<T>) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::with_capacity(2 * params.len());
        for (i, p) in params.iter().enumerate() {
            out.push((format!("adam.m.{}", p.name), self.m[i].clone()));
            out.push((format!("adam.v.{}", p.name), self.v[i].clone()));
        }
        out
    }

    /// Restores moments exported by [`Adam::export`] and the step counter.
    pub fn import(&mut self, params: &ParamSet<T>, tensors: &[(String, Tensor<T>)], step: u64) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            for (prefix, slot) in [("adam.m.", &mut self.m[i]), ("adam.v.", &mut self.v[i])] {
                let name = format!("{prefix}{}", p.name);
                let (_, t) = tensors
                    .iter()
                    .find(|(n, _)| *n == name)
                    .ok_or_else(|| Error::MissingTensor(name.clone()))?;
                if t.shape() != p.value.shape() {
                    return Err(Error::ShapeMismatch {
                        name,
                        expected: p.value.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
                *slot = t.clone();
            }
        }
        self.t = step;
        Ok(())
    }
}

/// `η0 · gamma^⌊epoch / step⌋` for a 0-based epoch index.
pub fn step_lr(epoch: usize, base_lr: f64, step: usize, gamma: f64) -> f64 {
    let k = if step == 0 { 0 } else { epoch / step };
    base_lr * Float::powi(gamma, k as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    fn single(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("x", ParamGroup::Omega, Tensor::scalar(value)).unwrap();
        p
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut p = single(0.7);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::scalar(0.0)], 1e-3).unwrap();
        assert_eq!(p.iter().next().unwrap().value.data(), &[0.7]);
        assert_eq!(adam.step_count(), 1);
        adam.step(&mut p, &[Tensor::scalar(0.0)], 1e-3).unwrap();
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Tensor::scalar(0.01)], 1e-3).unwrap();
        let moved = -p.iter().next().unwrap().value.data()[0];
        assert!((moved - 1e-3 * 0.01 / (0.01 + 1e-8)).abs() < 1e-15);
        assert!((moved - 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let err = adam.step(&mut p, &[Tensor::scalar(f64::NAN)], 1e-3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { what, .. } if what.contains('x')));
    }

    #[test]
    fn schedule() {
        let base = 1e-4;
        assert_eq!(step_lr(0, base, 5, 0.5), base);
        assert_eq!(step_lr(4, base, 5, 0.5), base);
        assert_eq!(step_lr(5, base, 5, 0.5), base / 2.0);
        assert_eq!(step_lr(12, base, 5, 0.5), base / 4.0);
    }
}
