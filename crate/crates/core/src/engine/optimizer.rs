use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::Params;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerMode {
    Sgd,
    #[default]
    Adam,
}

/// First-order optimizer state. Moment buffers are created lazily per
/// parameter name.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    mode: OptimizerMode,
    lr: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(mode: OptimizerMode, lr: f64) -> Self {
        Self {
            mode,
            lr,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn mode(&self) -> OptimizerMode {
        self.mode
    }

    /// Applies one update. Every parameter must have a gradient of the same
    /// shape; nothing is modified otherwise.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Usage(format!("missing gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::dim("optimizer_step", p.shape(), g.shape()));
            }
        }
        self.step += 1;
        match self.mode {
            OptimizerMode::Sgd => {
                for (name, p) in params.iter_mut() {
                    let g = &grads[name];
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * d;
                    }
                }
            }
            OptimizerMode::Adam => {
                let t = self.step as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (name, p) in params.iter_mut() {
                    let g = &grads[name];
                    let m = self
                        .first
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
                    let v = self
                        .second
                        .entry(name.clone())
                        .or_insert_with(|| Tensor::zeros(p.rows(), p.cols()));
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * d;
                        *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                    }
                }
            }
        }
        Ok(())
    }
}
