//! Adam optimizer and cosine learning-rate annealing.

use crate::error::{Error, Result};
use crate::model::ParamSet;

/// Per-parameter first/second moment accumulators and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    /// Zeroed accumulators mirroring the parameter shapes.
    pub fn new(params: &ParamSet) -> OptimizerState {
        let m = params.tensors().map(|t| vec![0.0; t.numel()]).collect::<Vec<_>>();
        let v = m.clone();
        OptimizerState { m, v, step: 0 }
    }

    pub fn from_parts(m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, step: u64) -> OptimizerState {
        OptimizerState { m, v, step }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Vec<f64>] {
        &self.v
    }

    fn check_aligned(&self, params: &ParamSet, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((t, g), m) in params.tensors().zip(grads).zip(&self.m) {
            if t.numel() != g.len() || t.numel() != m.len() {
                return Err(Error::contract(format!(
                    "adam: misaligned tensor ({} values, {} grads, {} moments)",
                    t.numel(),
                    g.len(),
                    m.len()
                )));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    state.check_aligned(params, grads)?;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    for ((tensor, g), (m, v)) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (k, value) in tensor.values_mut().iter_mut().enumerate() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            *value -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr_max` at step 0 down to 0 at `t_max`; steps
/// past `t_max` clamp to 0.
pub fn cosine_lr(step: usize, lr_max: f64, t_max: usize) -> f64 {
    if step >= t_max {
        return 0.0;
    }
    0.5 * lr_max * (1.0 + (std::f64::consts::PI * step as f64 / t_max as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, EncoderSpec};
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> ParamSet {
        ParamSet::from_entries(vec![("w".to_string(), Tensor::scalar(value))])
    }

    #[test]
    fn cosine_schedule_shape() {
        assert_eq!(cosine_lr(0, 0.1, 100), 0.1);
        assert_eq!(cosine_lr(100, 0.1, 100), 0.0);
        assert_eq!(cosine_lr(250, 0.1, 100), 0.0);
        assert!((cosine_lr(50, 0.1, 100) - 0.05).abs() < 1e-15);
        // monotone non-increasing
        let mut prev = f64::INFINITY;
        for step in 0..=100 {
            let lr = cosine_lr(step, 0.1, 100);
            assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn adam_zero_gradient_with_zero_moments_is_identity() {
        let mut p = one_param(1.5);
        let mut state = OptimizerState::new(&p);
        adam_step(&mut p, &[vec![0.0]], &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(p.get("w").unwrap().values(), &[1.5]);
    }

    #[test]
    fn adam_first_step_moves_by_roughly_lr() {
        // bias correction makes the first step ~ lr regardless of betas
        let mut p = one_param(1.0);
        let mut state = OptimizerState::new(&p);
        adam_step(&mut p, &[vec![1.0]], &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        let w = p.get("w").unwrap().values()[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn adam_is_deterministic() {
        let spec = EncoderSpec::vector(4, vec![6], 1, 3);
        let run = || {
            let mut p = init_params(&spec, 5).unwrap();
            let mut state = OptimizerState::new(&p);
            for step in 0..10 {
                let grads: Vec<Vec<f64>> = p
                    .tensors()
                    .map(|t| t.values().iter().map(|&v| (v * (step + 1) as f64).sin()).collect())
                    .collect();
                adam_step(&mut p, &grads, &mut state, 0.01, 0.9, 0.999, 1e-8).unwrap();
            }
            p.flat()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn adam_rejects_misaligned_gradients() {
        let mut p = one_param(1.0);
        let mut state = OptimizerState::new(&p);
        assert!(adam_step(&mut p, &[vec![1.0, 2.0]], &mut state, 0.1, 0.9, 0.999, 1e-8).is_err());
        assert!(adam_step(&mut p, &[], &mut state, 0.1, 0.9, 0.999, 1e-8).is_err());
    }
}
