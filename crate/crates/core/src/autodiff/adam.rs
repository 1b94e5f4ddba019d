//! Adam optimizer with bias correction.
//!
//! Moments are held in f64 whatever the parameter scalar is; the update is
//! computed in f64 and cast back into the parameters.

use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AdamError {
    #[error("gradient for parameter {name:?} is non-finite")]
    NonFiniteGrad { name: String },
    #[error("gradient count {grads} does not match parameter count {params}")]
    CountMismatch { grads: usize, params: usize },
    #[error("gradient shape {grad:?} does not match parameter {name:?} shape {param:?}")]
    ShapeMismatch {
        name: String,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
}

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Per-parameter first/second moment buffers plus the step counter.
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero-initialized state matching the parameter set's layout.
    pub fn new<S: Scalar>(params: &ParamSet<S>) -> Self {
        let m = (0..params.len()).map(|i| vec![0.0; params.tensor(i).numel()]).collect();
        let v = (0..params.len()).map(|i| vec![0.0; params.tensor(i).numel()]).collect();
        Self { step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One Adam update. `grads[i]` pairs with parameter `i`; a `None` entry
    /// (parameter unreachable from the loss) is treated as a zero gradient,
    /// which leaves the parameter unchanged while moments decay.
    pub fn update<S: Scalar>(
        &mut self,
        params: &mut ParamSet<S>,
        grads: &[Option<Tensor<S>>],
        cfg: &AdamConfig,
    ) -> Result<(), AdamError> {
        if grads.len() != params.len() {
            return Err(AdamError::CountMismatch {
                grads: grads.len(),
                params: params.len(),
            });
        }
        for (i, grad) in grads.iter().enumerate() {
            if let Some(g) = grad {
                if g.shape() != params.tensor(i).shape() {
                    return Err(AdamError::ShapeMismatch {
                        name: params.name(i).to_string(),
                        grad: g.shape().to_vec(),
                        param: params.tensor(i).shape().to_vec(),
                    });
                }
                if !g.all_finite() {
                    return Err(AdamError::NonFiniteGrad {
                        name: params.name(i).to_string(),
                    });
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.tensor_mut(i).data_mut();
            for j in 0..p.len() {
                let g = grad.as_ref().map_or(0.0, |g| g.data()[j].to_acc());
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                let next = p[j].to_acc() - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                p[j] = S::from_acc(next);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_param(value: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::scalar(value)).unwrap();
        p
    }

    /// Independent single-step Adam reference used to freeze expectations.
    fn adam_oracle_step(p: f64, g: f64, cfg: &AdamConfig) -> f64 {
        let m = (1.0 - cfg.beta1) * g;
        let v = (1.0 - cfg.beta2) * g * g;
        let m_hat = m / (1.0 - cfg.beta1);
        let v_hat = v / (1.0 - cfg.beta2);
        p - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps)
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = single_param(0.7);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig::default();
        for _ in 0..10 {
            state
                .update(&mut params, &[Some(Tensor::scalar(0.0))], &cfg)
                .unwrap();
        }
        assert_eq!(params.tensor(0).scalar_value(), 0.7);
        assert_eq!(state.step_count(), 10);
    }

    #[test]
    fn first_step_matches_hand_rolled_oracle() {
        let cfg = AdamConfig::default();
        let mut params = single_param(1.0);
        let mut state = AdamState::new(&params);
        state
            .update(&mut params, &[Some(Tensor::scalar(1.0))], &cfg)
            .unwrap();
        let expect = adam_oracle_step(1.0, 1.0, &cfg);
        assert!((params.tensor(0).scalar_value() - expect).abs() < 1e-15);
        // for unit gradient the step is ~lr
        assert!((1.0 - params.tensor(0).scalar_value() - 3e-4).abs() < 1e-8);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut params = single_param(0.3);
            let mut state = AdamState::new(&params);
            let cfg = AdamConfig::default();
            let mut rng = crate::rng::StreamRng::new(4, "adam");
            for _ in 0..100 {
                let g = rng.uniform(-1.0, 1.0);
                state
                    .update(&mut params, &[Some(Tensor::scalar(g))], &cfg)
                    .unwrap();
            }
            params.tensor(0).scalar_value().to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut params = single_param(0.0);
        let mut state = AdamState::new(&params);
        let err = state
            .update(
                &mut params,
                &[Some(Tensor::scalar(f64::NAN))],
                &AdamConfig::default(),
            )
            .unwrap_err();
        assert!(err.to_string().contains("\"w\""));
    }
}
