use crate::error::{Error, Result};
use crate::model::{GradStore, ParamStore};
use crate::tensor::{Real, Tensor};

/// RMSProp hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    /// Decay `ρ` of the squared-gradient average.
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            decay: 0.9,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter squared-gradient averages, zero-initialized.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptState<T = f32> {
    pub accumulators: ParamStore<T>,
}

impl RmsProp {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "rms decay {} outside (0, 1)",
                self.decay
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rms epsilon {} must be positive",
                self.epsilon
            )));
        }
        Ok(())
    }

    /// `r ← ρ·r + (1−ρ)·g²; θ ← θ − lr·g / (√r + ε)` for every gradient entry.
    pub fn step<T: Real>(
        &self,
        params: &mut ParamStore<T>,
        grads: &GradStore<T>,
        state: &mut OptState<T>,
    ) -> Result<()> {
        self.validate()?;
        let rho = T::from_f64(self.decay);
        let one_minus = T::from_f64(1.0 - self.decay);
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.epsilon);
        for (key, g) in grads.iter() {
            let theta = params.get_mut(key)?;
            if theta.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rmsprop",
                    lhs: theta.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if !state.accumulators.contains(key) {
                state
                    .accumulators
                    .insert(key, Tensor::zeros(g.shape().to_vec())?);
            }
            let r = state.accumulators.get_mut(key)?;
            for ((t, r), &g) in theta.data_mut().iter_mut().zip(r.data_mut()).zip(g.data()) {
                *r = rho * *r + one_minus * g * g;
                *t -= lr * g / (r.sqrt() + eps);
            }
        }
        Ok(())
    }
}
