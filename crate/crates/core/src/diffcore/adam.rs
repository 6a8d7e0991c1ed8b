use serde::{Deserialize, Serialize};

use super::DiffError;

/// Adam optimizer state for one flat parameter vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

    pub fn new(n_params: usize) -> Self {
        Self::with_learning_rate(n_params, Self::DEFAULT_LEARNING_RATE)
    }

    pub fn with_learning_rate(n_params: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }

    /// Clear both moments and the step count, keeping the hyperparameters.
    pub fn reset(&mut self) {
        self.first_moment.fill(0.0);
        self.second_moment.fill(0.0);
        self.step_count = 0;
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), DiffError> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n || self.second_moment.len() != n {
            return Err(DiffError::LengthMismatch {
                expected: n,
                params: params.len(),
                grads: grads.len(),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        let lr = self.learning_rate;
        let eps = self.epsilon;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`] returning the updated parameters.
pub fn adam_step(
    state: &mut AdamState,
    params: &[f64],
    grads: &[f64],
) -> Result<Vec<f64>, DiffError> {
    let mut out = params.to_vec();
    state.step(&mut out, grads)?;
    Ok(out)
}
