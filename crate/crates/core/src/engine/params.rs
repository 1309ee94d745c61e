use std::collections::BTreeMap;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named trainable tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

/// Tape handles for a registered [`Params`] set.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Records every tensor as a named trainable leaf on `tape`.
    pub fn register<'t>(&self, tape: &'t Tape) -> ParamVars<'t> {
        let vars = self
            .tensors
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(name.clone(), t.clone())))
            .collect();
        ParamVars { vars }
    }
}

impl<'t> ParamVars<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("no parameter named `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}
