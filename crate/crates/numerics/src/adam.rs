use serde::{Deserialize, Serialize};

use crate::error::{NumericsError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam with one pair of moment buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            config,
            step_count: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update of every parameter in `params` with the matching entry of `grads`.
    ///
    /// All gradients are validated before anything is modified, so a rejected
    /// step leaves both the parameters and the state untouched.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() || self.first_moment.len() != params.len() {
            return Err(NumericsError::Dimension {
                op: "adam_step (parameter count)",
                lhs: vec![params.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, ((name, p), g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || self.first_moment[i].shape() != p.shape() {
                return Err(NumericsError::Dimension {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(NumericsError::NonFinite(format!("gradient of `{name}`")));
            }
        }

        self.step_count += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let t = self.step_count as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            let g = grads[i].data();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn store(values: &[f64]) -> ParamStore {
        let mut p = ParamStore::new();
        p.add("w", Tensor::vector(values.to_vec()));
        p
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let g = 0.3;
        s.step(&mut p, &[Tensor::vector(vec![g])]).unwrap();
        let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
        assert_abs_diff_eq!(p.get(crate::ParamId(0)).data()[0], expected, epsilon = 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = store(&[0.5, -2.0]);
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), &p);
        for _ in 0..5 {
            s.step(&mut p, &[Tensor::zeros(vec![2])]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn equal_gradients_equal_updates() {
        let mut p = store(&[1.0, 1.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &[Tensor::vector(vec![0.7, 0.7])]).unwrap();
        let d = p.get(crate::ParamId(0)).data();
        assert_eq!(d[0], d[1]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = store(&[1.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        let err = s.step(&mut p, &[Tensor::vector(vec![f64::NAN])]).unwrap_err();
        assert!(err.to_string().contains("`w`"), "{err}");
        assert_eq!(s.step_count, 0);
        assert_eq!(p.get(crate::ParamId(0)).data(), &[1.0]);
    }
}
