//! Stochastic gradient descent with momentum and L2 weight decay.

use serde::{Deserialize, Serialize};

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    /// Learning rate 0.1, momentum 0.9, weight decay 1e-5.
    fn default() -> Self {
        SgdConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 1e-5 }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("weight decay {} must be >= 0", self.weight_decay)));
        }
        Ok(())
    }
}

/// Optimizer state: one velocity buffer per parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Sgd<T> {
    config: SgdConfig,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(config: SgdConfig, params: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let velocity = params.iter().map(|p| vec![T::zero(); p.tensor.len()]).collect();
        Ok(Sgd { config, velocity })
    }

    /// Restores a previously saved state. Buffer lengths must match the store.
    pub fn with_velocity(config: SgdConfig, params: &ParamStore<T>, velocity: Vec<Vec<T>>) -> Result<Self> {
        config.validate()?;
        if velocity.len() != params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} velocity buffers for {} parameters",
                velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.iter().zip(&velocity) {
            if p.tensor.len() != v.len() {
                return Err(Error::Parameter {
                    name: p.name.clone(),
                    detail: format!("velocity has {} values, parameter has {}", v.len(), p.tensor.len()),
                });
            }
        }
        Ok(Sgd { config, velocity })
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &[Vec<T>] {
        &self.velocity
    }

    /// `v <- momentum * v + (g + weight_decay * theta)`, `theta <- theta - lr * v`,
    /// then clears every gradient.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.velocity.len() != params.len() {
            return Err(Error::InvalidArgument("optimizer was built for a different parameter set".into()));
        }
        if let Some(p) = params.iter().find(|p| p.tensor.is_trainable() && p.tensor.grad().is_none()) {
            return Err(Error::MissingGrad(p.name.clone()));
        }
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let mu = T::from_f64_lossy(self.config.momentum);
        let wd = T::from_f64_lossy(self.config.weight_decay);
        let skip_update = self.config.learning_rate == 0.0;
        for (p, vel) in params.iter_mut().zip(&mut self.velocity) {
            if !p.tensor.is_trainable() {
                continue;
            }
            let grad = p.tensor.grad().expect("checked above").to_vec();
            let theta = p.tensor.data_mut();
            for ((v, th), g) in vel.iter_mut().zip(theta.iter_mut()).zip(grad) {
                *v = mu * *v + (g + wd * *th);
                if !skip_update {
                    *th = *th - lr * *v;
                }
            }
        }
        params.zero_grad();
        Ok(())
    }
}
