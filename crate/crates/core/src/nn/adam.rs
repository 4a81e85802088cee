//! Bias-corrected Adam over a flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Fresh state with the crate defaults β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(param_count: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update in place. Fails on any non-finite gradient, reporting the
/// flat index of the first offender; callers with a parameter layout can
/// translate that into a group name.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "params {} / grads {} / state {}",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Training {
            epoch: 0,
            reason: format!("non-finite gradient at flat parameter index {idx}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = &mut state.first_moment[i];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        let v = &mut state.second_moment[i];
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        params[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![1.5, -0.25, 3.0];
        let mut state = AdamState::new(3, 0.1);
        adam_step(&mut params, &[0.0, 0.0, 0.0], &mut state).unwrap();
        assert_eq!(params, vec![1.5, -0.25, 3.0]);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // t=1, g=1: m̂ = v̂ = 1, so Δ = −η/(1+ε) ≈ −η.
        let mut params = vec![2.0];
        let mut state = AdamState::new(1, 0.1);
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let moved = 2.0 - params[0];
        assert!((moved - 0.1).abs() < 1e-8, "moved {moved}");
    }

    #[test]
    fn second_identical_step_is_no_larger() {
        let mut params = vec![0.0];
        let mut state = AdamState::new(1, 0.1);
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let first = params[0].abs();
        let before = params[0];
        adam_step(&mut params, &[1.0], &mut state).unwrap();
        let second = (params[0] - before).abs();
        assert!(second <= first + 1e-12, "first {first} second {second}");
    }

    #[test]
    fn non_finite_gradient_is_a_training_error() {
        let mut params = vec![0.0, 0.0];
        let mut state = AdamState::new(2, 0.1);
        let err = adam_step(&mut params, &[0.0, f64::NAN], &mut state).unwrap_err();
        assert!(err.to_string().contains("index 1"), "{err}");
    }
}
