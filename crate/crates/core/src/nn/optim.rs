use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::checkpoint::OptimizerState;
use super::layers::ParamStore;
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimiser with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub(crate) m: BTreeMap<String, Tensor<T>>,
    pub(crate) v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// Applies one update. Parameters without a gradient entry are left alone.
    pub fn update(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &BTreeMap<String, Tensor<T>>,
    ) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let step_size = T::of(c.lr / bc1);
        let eps = T::of(c.eps);
        let inv_bc2 = T::of(1.0 / bc2);

        for (name, g) in grads {
            let p = params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("gradient for unknown '{name}'")))?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                *pi = *pi - step_size * *mi / ((*vi * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn moments(&self) -> (&BTreeMap<String, Tensor<T>>, &BTreeMap<String, Tensor<T>>) {
        (&self.m, &self.v)
    }
}

impl Adam<f32> {
    pub fn to_state(&self) -> OptimizerState {
        let store = |map: &BTreeMap<String, Tensor<f32>>| {
            let mut s = ParamStore::new();
            for (k, t) in map {
                s.insert(k.clone(), t.clone());
            }
            s
        };
        OptimizerState {
            step: self.step,
            m: store(&self.m),
            v: store(&self.v),
        }
    }

    /// Restores moments saved by [`Adam::to_state`], checked against `params`.
    pub fn from_state(config: AdamConfig, state: &OptimizerState, params: &ParamStore<f32>) -> Result<Self> {
        let load = |store: &ParamStore<f32>| {
            let mut map = BTreeMap::new();
            for (k, t) in store.iter() {
                let p = params
                    .get(k)
                    .map_err(|_| Error::Format(format!("optimiser state for unknown '{k}'")))?;
                if p.shape() != t.shape() {
                    return Err(Error::shape("optimiser state", p.shape(), t.shape()));
                }
                map.insert(k.to_string(), t.clone());
            }
            Ok(map)
        };
        Ok(Self {
            config,
            step: state.step,
            m: load(&state.m)?,
            v: load(&state.v)?,
        })
    }
}
