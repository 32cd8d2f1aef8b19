//! Bias-corrected Adam.

use alloc::vec;
use alloc::vec::Vec;

use super::{Scalar, Tensor};
use num_traits::Float;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(n: usize) -> AdamState<T> {
        AdamState {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }
}

/// One update of `param` in place.
pub fn adam_step<T: Scalar>(
    cfg: &AdamConfig,
    state: &mut AdamState<T>,
    param: &mut [T],
    grad: &[T],
) {
    debug_assert_eq!(param.len(), grad.len());
    state.t += 1;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(Float::powi(cfg.beta1, state.t as i32));
    let c2 = T::one() - T::of(Float::powi(cfg.beta2, state.t as i32));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for i in 0..param.len() {
        let g = grad[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        param[i] = param[i] - lr * mh / (vh.sqrt() + eps);
    }
}

/// Adam over a fixed list of parameter tensors.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    states: Vec<AdamState<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Adam<T> {
        Adam {
            config,
            states: sizes.into_iter().map(AdamState::new).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }

    /// Updates parameter `index`. A missing gradient counts as zero.
    pub fn step(&mut self, index: usize, param: &mut Tensor<T>, grad: Option<&Tensor<T>>) {
        let state = &mut self.states[index];
        match grad {
            Some(g) => adam_step(&self.config, state, param.data_mut(), g.data()),
            None => {
                let zeros = vec![T::zero(); param.numel()];
                adam_step(&self.config, state, param.data_mut(), &zeros);
            }
        }
    }
}
