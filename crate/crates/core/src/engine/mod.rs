//! Dense numerics with reverse-mode differentiation.
//!
//! [`Tensor`] holds values; [`Tape`] and [`Var`] record a forward pass so
//! [`Tape::backward`] can return gradients for every trainable leaf.
//! [`OptimizerState`] applies SGD or Adam updates to a [`Params`] set and
//! [`grad_check`] validates tape gradients against central differences.

mod gradcheck;
mod optimizer;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport, DEFAULT_STEP};
pub use optimizer::{OptimizerMode, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use params::{ParamVars, Params};
pub use tape::{bce_value, mse_value, softmax_rows, Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

pub(crate) use tape::sigmoid;

/// Activation functions applied by [`activate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    SoftmaxRows,
}

/// Untaped activation on a plain tensor.
pub fn activate(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::SoftmaxRows => softmax_rows(x),
    }
}

/// Loss functions available through [`loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Rmse,
    Bce,
}

/// Untaped loss between equally shaped tensors.
pub fn loss(pred: &Tensor, target: &Tensor, kind: LossKind) -> crate::Result<f64> {
    if pred.shape() != target.shape() {
        return Err(crate::Error::Dimension {
            op: "loss",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    Ok(match kind {
        LossKind::Mse => mse_value(pred, target),
        LossKind::Rmse => mse_value(pred, target).sqrt(),
        LossKind::Bce => bce_value(pred, target),
    })
}
