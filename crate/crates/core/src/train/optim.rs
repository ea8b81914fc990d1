//! AdamW with decoupled weight decay, plus the exponential LR schedule.

use crate::error::{Error, Result};
use crate::nn::ParamStore;

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
            weight_decay: 0.01,
        }
    }
}

/// First/second moment buffers per parameter plus the shared step count.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let v = store.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        OptimizerState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One AdamW update. Bias-corrected moments drive the gradient step; weight
/// decay multiplies the parameter directly rather than entering the moments.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &[Vec<f64>],
    state: &mut OptimizerState,
    hp: &AdamWConfig,
) -> Result<()> {
    if grads.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "adamw_step: {} gradients for {} parameters",
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (idx, param) in store.iter_mut().enumerate() {
        let g = &grads[idx];
        if g.len() != param.value.numel() {
            return Err(Error::invalid(format!(
                "adamw_step: gradient arity mismatch for `{}`",
                param.name
            )));
        }
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite gradient {bad} for parameter `{}`",
                param.name
            )));
        }
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        for (j, theta) in param.value.data.iter_mut().enumerate() {
            m[j] = hp.beta1 * m[j] + (1.0 - hp.beta1) * g[j];
            v[j] = hp.beta2 * v[j] + (1.0 - hp.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta -= hp.lr * hp.weight_decay * *theta;
            *theta -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// lr0 * gamma^epoch (epoch 0 gives lr0 unchanged).
pub fn lr_exponential(lr0: f64, gamma: f64, epoch: usize) -> f64 {
    lr0 * gamma.powi(epoch as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store_with(values: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        let n = values.len();
        s.add("p", Tensor::new(vec![n], values).unwrap());
        s
    }

    #[test]
    fn zero_grads_zero_decay_is_identity() {
        let mut store = store_with(vec![0.4, -0.7, 2.0]);
        let mut state = OptimizerState::new(&store);
        let hp = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &[vec![0.0; 3]], &mut state, &hp).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data, vec![0.4, -0.7, 2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr_in_grad_direction() {
        let mut store = store_with(vec![1.0]);
        let mut state = OptimizerState::new(&store);
        let hp = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let g = 0.37;
        adamw_step(&mut store, &[vec![g]], &mut state, &hp).unwrap();
        // First-step closed form: theta - lr * g / (|g| + eps').
        let expect = 1.0 - hp.lr * g / (g * g / (1.0 - hp.beta2) * (1.0 - hp.beta2)).sqrt().max(0.0).max(0.0).max(g.abs()) ;
        // The bias-corrected ratio is exactly g/|g| up to eps, so the move is
        // lr within 1e-6.
        let got = store.iter().next().unwrap().value.data[0];
        assert!((got - (1.0 - hp.lr)).abs() < 1e-6, "got {got}");
        let _ = expect;
    }

    #[test]
    fn decoupled_decay_shrinks_parameters_without_grads() {
        let mut store = store_with(vec![2.0, -4.0]);
        let mut state = OptimizerState::new(&store);
        let hp = AdamWConfig {
            lr: 0.5,
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &[vec![0.0; 2]], &mut state, &hp).unwrap();
        let vals = &store.iter().next().unwrap().value.data;
        assert!((vals[0] - 2.0 * (1.0 - 0.05)).abs() < 1e-12);
        assert!((vals[1] + 4.0 * (1.0 - 0.05)).abs() < 1e-12);
    }

    #[test]
    fn lr_zero_is_identity_even_with_grads() {
        let mut store = store_with(vec![1.5, 0.5]);
        let mut state = OptimizerState::new(&store);
        let hp = AdamWConfig {
            lr: 0.0,
            weight_decay: 0.3,
            ..AdamWConfig::default()
        };
        adamw_step(&mut store, &[vec![7.0, -3.0]], &mut state, &hp).unwrap();
        assert_eq!(store.iter().next().unwrap().value.data, vec![1.5, 0.5]);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = store_with(vec![1.0]);
        let mut state = OptimizerState::new(&store);
        let hp = AdamWConfig::default();
        let err = adamw_step(&mut store, &[vec![f64::NAN]], &mut state, &hp).unwrap_err();
        assert!(err.to_string().contains("`p`"), "{err}");
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_exponential(0.3, 0.5, 0), 0.3);
        assert_eq!(lr_exponential(0.3, 1.0, 17), 0.3);
        assert!((lr_exponential(0.8, 0.5, 3) - 0.1).abs() < 1e-15);
    }
}
