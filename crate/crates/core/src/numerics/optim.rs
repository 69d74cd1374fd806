use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam { .. } => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
}

/// Optimizer configuration plus per-parameter buffers keyed by name.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Real = f32> {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Moments<T>>,
    step_count: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        OptimizerState {
            kind,
            learning_rate,
            weight_decay: 0.0,
            buffers: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::adam(), learning_rate)
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        match self.kind {
            OptimizerKind::Sgd => self.sgd_step(params),
            OptimizerKind::Adam { .. } => self.adam_step(params),
        }
    }

    fn check_grads(params: &ParamStore<T>) -> Result<()> {
        for (_, p) in params.iter() {
            if p.trainable && p.tensor.grad().is_none() {
                return Err(Error::State(format!(
                    "parameter {:?} has no gradient; run backward first",
                    p.name
                )));
            }
        }
        Ok(())
    }

    /// `p ← p − lr·(grad + wd·p)`, then clears gradients.
    pub fn sgd_step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        Self::check_grads(params)?;
        let lr = T::lit(self.learning_rate);
        let wd = T::lit(self.weight_decay);
        for p in params.iter_mut() {
            let Some(grad) = p.tensor.take_grad() else { continue };
            if !p.trainable {
                continue;
            }
            for (w, g) in p.tensor.data_mut().iter_mut().zip(grad) {
                *w = *w - lr * (g + wd * *w);
            }
        }
        self.step_count += 1;
        Ok(())
    }

    /// Adam with bias correction, then clears gradients.
    pub fn adam_step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        let OptimizerKind::Adam { beta1, beta2, eps } = self.kind else {
            return Err(Error::State("adam_step on a non-Adam optimizer".into()));
        };
        Self::check_grads(params)?;
        let t = self.step_count + 1;
        let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
        let c1 = T::one() - T::lit(beta1.powi(t as i32));
        let c2 = T::one() - T::lit(beta2.powi(t as i32));
        let lr = T::lit(self.learning_rate);
        let wd = T::lit(self.weight_decay);
        for p in params.iter_mut() {
            let Some(grad) = p.tensor.take_grad() else { continue };
            if !p.trainable {
                continue;
            }
            let n = grad.len();
            let m = self.buffers.entry(p.name.clone()).or_insert_with(|| Moments {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
            });
            if m.first.len() != n {
                return Err(Error::Shape(format!(
                    "optimizer buffer for {:?} has {} entries, parameter has {n}",
                    p.name,
                    m.first.len()
                )));
            }
            for (i, (w, g)) in p.tensor.data_mut().iter_mut().zip(grad).enumerate() {
                let g = g + wd * *w;
                m.first[i] = b1 * m.first[i] + (T::one() - b1) * g;
                m.second[i] = b2 * m.second[i] + (T::one() - b2) * g * g;
                let mhat = m.first[i] / c1;
                let vhat = m.second[i] / c2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step_count = t;
        Ok(())
    }
}
