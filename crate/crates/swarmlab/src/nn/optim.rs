//! Adaptive-moment optimizer over the flat parameter view.

use super::ParamSet;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// First/second moment accumulators aligned with a [`ParamSet`] flat view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(learning_rate: f64, flat_len: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: vec![0.0; flat_len],
            second_moment: vec![0.0; flat_len],
        }
    }

    /// One bias-corrected moment update. Gradients must be finite; the error
    /// message names the offending tensor.
    pub fn apply(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<()> {
        params.check_same_shape(grads)?;
        if params.flat_len() != self.first_moment.len() {
            return Err(Error::argument(format!(
                "optimizer state length {} does not match parameter count {}",
                self.first_moment.len(),
                params.flat_len()
            )));
        }
        for t in grads.tensors() {
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in `{}`",
                    t.name
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        let flat_grads = grads.flatten();
        let mut flat = params.flatten();
        for i in 0..flat.len() {
            let g = flat_grads[i];
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            flat[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        params.copy_from_flat(&flat)
    }
}
