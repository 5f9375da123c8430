use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for the parameters an optimiser owns.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    ids: Vec<ParamId>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let first = ids
            .iter()
            .map(|&id| vec![0.0; store.get(id).value.len()])
            .collect();
        let second = ids
            .iter()
            .map(|&id| vec![0.0; store.get(id).value.len()])
            .collect();
        AdamState {
            config,
            ids,
            first,
            second,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }
}

/// One bias-corrected Adam update over the parameters owned by `state`,
/// reading `Parameter::grad` and resetting it to zero afterwards.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for &id in &state.ids {
        let p = store.get(id);
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient {
                name: p.name.clone(),
            });
        }
    }
    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (slot, &id) in state.ids.iter().enumerate() {
        let p = store.get_mut(id);
        let m = &mut state.first[slot];
        let v = &mut state.second[slot];
        let grad = p.grad.values_mut();
        let value = p.value.values_mut();
        for k in 0..value.len() {
            let g = grad[k];
            m[k] = beta1 * m[k] + (1.0 - beta1) * g;
            v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            value[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            grad[k] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;
    use proptest::prelude::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![1.0]));
        let mut state = AdamState::new(&store, vec![id], AdamConfig::with_lr(0.01));
        store.get_mut(id).grad.values_mut()[0] = -3.7;
        adam_step(&mut store, &mut state).unwrap();
        let moved = store.value(id)[0] - 1.0;
        let expected = 0.01 * 3.7 / (3.7 + 1e-8);
        assert!((moved - expected).abs() < 1e-15);
        assert_eq!(store.get(id).grad.values(), &[0.0]);
    }

    #[test]
    fn quadratic_trace_matches_reference() {
        // f(θ) = Σ (θ_k − c_k)^2 with lr 0.1; reference computed by a
        // separate scalar implementation.
        let reference = [
            [0.09999999975000001, 4.900000000083334],
            [0.19983351388429885, 4.8000473373099775],
            [0.29937660795353477, 4.700174570029995],
            [0.398495104710579, 4.6004149260912985],
            [0.4970442187049879, 4.500802234400674],
        ];
        let target = [2.0, -1.0];
        let mut store = ParamStore::new();
        let id = store.add("theta", Tensor::vector(vec![0.0, 5.0]));
        let mut state = AdamState::new(&store, vec![id], AdamConfig::with_lr(0.1));
        for expected in reference {
            let theta = store.value(id).to_vec();
            let g = store.get_mut(id).grad.values_mut();
            for k in 0..2 {
                g[k] = 2.0 * (theta[k] - target[k]);
            }
            adam_step(&mut store, &mut state).unwrap();
            for k in 0..2 {
                assert!((store.value(id)[k] - expected[k]).abs() < 1e-10);
            }
        }
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut store = ParamStore::new();
        let id = store.add("policy.action.w", Tensor::vector(vec![0.0, 0.0]));
        store.get_mut(id).grad.values_mut()[1] = f64::NAN;
        let mut state = AdamState::new(&store, vec![id], AdamConfig::default());
        match adam_step(&mut store, &mut state) {
            Err(Error::NonFiniteGradient { name }) => assert_eq!(name, "policy.action.w"),
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn zero_gradient_from_fresh_state_is_identity(
            values in proptest::collection::vec(-10.0f64..10.0, 1..16),
            lr in 1e-5f64..1.0,
        ) {
            let mut store = ParamStore::new();
            let id = store.add("w", Tensor::vector(values.clone()));
            let mut state = AdamState::new(&store, vec![id], AdamConfig::with_lr(lr));
            adam_step(&mut store, &mut state).unwrap();
            prop_assert_eq!(store.value(id), &values[..]);
        }
    }
}
