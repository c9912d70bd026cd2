use serde::{Deserialize, Serialize};

use super::{NumericError, ParamStore, Scalar, Tensor};

/// Adam hyperparameters with an exponentially decaying learning rate
/// `base_lr * exp(-t / decay)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub base_lr: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-4,
            decay: 1.5e5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn learning_rate(&self, step: u64) -> f64 {
        self.base_lr * (-(step as f64) / self.decay).exp()
    }
}

/// Moment accumulators for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new<T: Scalar>(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .ids()
            .map(|id| vec![0.0; params.get(id).len()])
            .collect();
        Self {
            config,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    /// Number of updates applied so far; the next update uses `lr(step)`.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }

    /// Applies one bias-corrected Adam update. Parameters whose gradient is
    /// `None` are left untouched, moments included.
    pub fn update<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Option<Tensor<T>>],
    ) -> Result<(), NumericError> {
        if grads.len() != params.len() || self.first.len() != params.len() {
            return Err(NumericError::Shape(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (id, grad) in params.ids().zip(grads) {
            if let Some(g) = grad {
                if g.shape() != params.get(id).shape() {
                    return Err(NumericError::Shape(format!(
                        "gradient {:?} for parameter {} {:?}",
                        g.shape(),
                        params.name(id),
                        params.get(id).shape()
                    )));
                }
                if !g.is_finite() {
                    return Err(NumericError::NonFinite {
                        what: format!("gradient of {}", params.name(id)),
                    });
                }
            }
        }

        let c = self.config;
        let lr = c.learning_rate(self.step);
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (i, (id, grad)) in params.ids().zip(grads).enumerate() {
            let Some(g) = grad else { continue };
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let p = params.get_mut(id).data_mut();
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let g = g.as_f64();
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = T::from_f64(p.as_f64() - lr * m_hat / (v_hat.sqrt() + c.epsilon));
            }
        }
        self.step += 1;
        Ok(())
    }
}
