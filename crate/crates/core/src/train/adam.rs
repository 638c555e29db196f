//! Adam with bias correction.

use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of `params` in place.
///
/// The moment buffers are created on the first call; later calls must pass
/// the same number of parameters with the same shapes.
pub fn optimizer_step<'a, I>(params: I, grads: &[Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<(), TensorError>
where
    I: IntoIterator<Item = &'a mut Tensor>,
{
    let params: Vec<&mut Tensor> = params.into_iter().collect();
    if params.len() != grads.len() {
        return Err(TensorError::contract("optimizer_step", format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TensorError::dim("optimizer_step", format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(&params).any(|(m, p)| m.len() != p.len()) {
        return Err(TensorError::contract("optimizer_step", "state was initialized for a different parameter set"));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.into_iter().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / correction1;
            let v_hat = *vi / correction2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Tensor::from_vec(vec![0.5, -2.0]);
        let mut state = AdamState::new();
        for _ in 0..3 {
            optimizer_step([&mut p], &[Tensor::zeros(&[2])], &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p.data(), &[0.5, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::from_vec(vec![1.0, 1.0, 1.0]);
        let mut state = AdamState::new();
        optimizer_step([&mut p], &[Tensor::from_vec(vec![3.0, -0.2, 1e-3])], &mut state, &cfg).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g| + ε).
        for (&w, g) in p.data().iter().zip([3.0f64, -0.2, 1e-3]) {
            let expected = 1.0 - cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((w - expected).abs() < 1e-15);
            assert!(((1.0 - w).abs() - cfg.learning_rate).abs() < 1e-7);
        }
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut p = Tensor::zeros(&[2]);
        let mut state = AdamState::new();
        assert!(optimizer_step([&mut p], &[Tensor::zeros(&[3])], &mut state, &AdamConfig::default()).is_err());
        assert!(optimizer_step([&mut p], &[], &mut state, &AdamConfig::default()).is_err());
    }
}
