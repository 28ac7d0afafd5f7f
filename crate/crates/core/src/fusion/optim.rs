use serde::{Deserialize, Serialize};

use super::{FusionError, Result};

/// AdamW with decoupled weight decay:
/// `θ ← θ − lr·m̂/(√v̂ + eps) − lr·wd·θ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamWConfig {
            lr,
            weight_decay,
            ..AdamWConfig::default()
        }
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize, config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// Applies one update. A non-finite gradient aborts the step and leaves
    /// both parameters and state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(FusionError::DimMismatch {
                what: "optimizer parameters",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(FusionError::DimMismatch {
                what: "gradient",
                expected: params.len(),
                got: grads.len(),
            });
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(FusionError::NonFinite("gradient"));
        }
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            let theta = params[i];
            params[i] = theta - lr * (m_hat / (v_hat.sqrt() + eps)) - lr * weight_decay * theta;
        }
        Ok(())
    }
}

pub fn adamw_step(params: &mut [f64], grads: &[f64], state: &mut OptimizerState) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let mut p = vec![1.5, -2.0, 0.0];
        let mut s = OptimizerState::new(3, AdamWConfig::new(0.01, 0.0));
        adamw_step(&mut p, &[0.0; 3], &mut s).unwrap();
        assert_eq!(p, vec![1.5, -2.0, 0.0]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn single_scalar_step_by_hand() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(1, AdamWConfig::new(0.001, 0.01));
        adamw_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = 1.0 - 0.001 * (1.0 / (1.0 + 1e-8)) - 0.001 * 0.01 * 1.0;
        assert!((p[0] - expected).abs() < 1e-15, "{} vs {expected}", p[0]);
        assert!((p[0] - 0.998_990_000_01).abs() < 1e-12);
        assert!(s.second_moment()[0] >= 0.0);
    }

    #[test]
    fn identical_tensors_update_identically() {
        let mut p = vec![0.3, -0.7, 0.3, -0.7];
        let g = [0.2, -1.1, 0.2, -1.1];
        let mut s = OptimizerState::new(4, AdamWConfig::default());
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut s).unwrap();
        }
        assert_eq!(p[0].to_bits(), p[2].to_bits());
        assert_eq!(p[1].to_bits(), p[3].to_bits());
    }

    #[test]
    fn non_finite_gradient_aborts() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(2, AdamWConfig::default());
        let before = s.clone();
        assert!(matches!(adamw_step(&mut p, &[0.1, f64::INFINITY], &mut s), Err(FusionError::NonFinite(_))));
        assert_eq!(p, vec![1.0, 2.0]);
        assert_eq!(s, before);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![1.0, 2.0];
        let mut s = OptimizerState::new(2, AdamWConfig::default());
        assert!(adamw_step(&mut p, &[0.1], &mut s).is_err());
    }
}
