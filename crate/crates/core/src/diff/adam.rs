use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Moment estimates for one parameter tensor.
///
/// The step count is kept per tensor so a parameter that sits out a step
/// (another task's weights, say) is not bias-corrected as if it had moved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        Self { first_moment: Tensor::zeros(shape), second_moment: Tensor::zeros(shape), step_count: 0 }
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, config: &AdamConfig) {
    debug_assert_eq!(param.shape(), grad.shape());
    debug_assert_eq!(param.shape(), state.first_moment.shape());
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    let m = state.first_moment.data_mut();
    let v = state.second_moment.data_mut();
    for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.lr * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

/// Adam over a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let states = params.into_iter().map(|p| AdamState::new(p.shape())).collect();
        Self { config, states }
    }

    /// Updates the parameters that received a gradient; `None` entries are left alone.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Option<Tensor>]) {
        debug_assert_eq!(params.len(), self.states.len());
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            if let Some(g) = g {
                adam_step(p, g, s, &self.config);
            }
        }
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }
}
