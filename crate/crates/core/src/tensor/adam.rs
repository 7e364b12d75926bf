use super::{ParamStore, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers, one per parameter, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn zeros(store: &ParamStore<T>) -> Self {
        let m: Vec<Vec<T>> = store.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        Self { v: m.clone(), m, step: 0 }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub state: OptimizerState<T>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        Self { config, state: OptimizerState::zeros(store) }
    }

    pub fn with_state(config: AdamConfig, state: OptimizerState<T>) -> Self {
        Self { config, state }
    }

    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<()> {
        if !(self.config.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("adam: learning rate {} must be positive", self.config.lr)));
        }
        if grads.len() != store.len() || self.state.m.len() != store.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: vec![store.len()],
                rhs: vec![grads.len()],
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != store.tensors()[i].numel() || self.state.m[i].len() != g.len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    lhs: store.tensors()[i].shape().to_vec(),
                    rhs: vec![g.len()],
                });
            }
        }
        self.state.step += 1;
        let t = self.state.step as f64;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (ob1, ob2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(eps);
        for (i, g) in grads.iter().enumerate() {
            let p = store.tensors_mut()[i].data_mut();
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for j in 0..g.len() {
                m[j] = b1 * m[j] + ob1 * g[j];
                v[j] = b2 * v[j] + ob2 * g[j] * g[j];
                p[j] -= step_size * m[j] / ((v[j] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
