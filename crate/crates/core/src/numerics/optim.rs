use std::collections::BTreeMap;

use super::params::ParamSet;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates keyed by parameter name, plus the update count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: ParamSet::new(),
            v: ParamSet::new(),
            t: 0,
        }
    }

    /// Applies one bias-corrected Adam update to every parameter that has a gradient.
    ///
    /// Moments of parameters without a gradient this step decay as if the gradient
    /// were zero; the parameters themselves are only touched when they have a gradient.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
        cfg: &AdamConfig,
    ) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("`{name}` param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if let Ok(m) = self.m.get(name) {
                if m.shape() != p.shape() {
                    return Err(Error::shape("adam_step", format!("state for `{name}`")));
                }
            }
        }
        self.t += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let bc1 = T::of(1.0 - cfg.beta1.powi(self.t as i32));
        let bc2 = T::of(1.0 - cfg.beta2.powi(self.t as i32));
        let lr = T::of(lr);
        let eps = T::of(cfg.eps);
        let one = T::one();
        for (name, g) in grads {
            let shape = g.shape().to_vec();
            if !self.m.contains(name) {
                self.m.insert(name.clone(), Tensor::zeros(&shape));
                self.v.insert(name.clone(), Tensor::zeros(&shape));
            }
            let m = self.m.get_mut(name).expect("inserted").data_mut();
            let v = self.v.get_mut(name).expect("inserted").data_mut();
            let p = params.get_mut(name).expect("checked").data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        for (name, m) in self.m.iter_mut() {
            if !grads.contains_key(name) {
                m.data_mut().iter_mut().for_each(|x| *x *= b1);
            }
        }
        for (name, v) in self.v.iter_mut() {
            if !grads.contains_key(name) {
                v.data_mut().iter_mut().for_each(|x| *x *= b2);
            }
        }
        Ok(())
    }
}
