//! Named parameters and their binding onto a graph.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{Gradients, Graph, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Arc<Tensor>,
    pub trainable: bool,
}

/// Parameters keyed by dotted name, iterated in name order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) {
        self.params.insert(
            name.into(),
            Param {
                value: Arc::new(value),
                trainable,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| p.value.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.params
            .get_mut(name)
            .map(|p| p.trainable = trainable)
            .ok_or_else(|| Error::usage(format!("unknown parameter '{name}'")))
    }

    pub fn freeze_all(&mut self) {
        self.params.values_mut().for_each(|p| p.trainable = false);
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, p)| p.trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.params
            .values()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Mutable access; clones the tensor if a graph still shares it.
    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| Arc::make_mut(&mut p.value))
            .ok_or_else(|| Error::usage(format!("unknown parameter '{name}'")))
    }

    /// Bitwise equality of every parameter value and trainable flag.
    pub fn bit_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|((na, a), (nb, b))| {
                na == nb && a.trainable == b.trainable && a.value.bit_eq(&b.value)
            })
    }
}

/// Which bound parameters record gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradMode {
    /// Inference: nothing requires gradients.
    Off,
    /// Only parameters flagged trainable.
    Trainable,
    /// Every parameter, frozen or not (used by gradient checks).
    All,
}

/// A graph plus lazily bound parameter leaves.
pub struct Session<'a> {
    pub g: Graph,
    store: &'a ParamStore,
    bound: BTreeMap<String, Var>,
    mode: GradMode,
    lora_scale: f64,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, mode: GradMode, lora_scale: f64) -> Self {
        Self {
            g: Graph::new(),
            store,
            bound: BTreeMap::new(),
            mode,
            lora_scale,
        }
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    /// Leaf for the named parameter, created on first use.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            return Ok(v);
        }
        let p = self
            .store
            .param(name)
            .ok_or_else(|| Error::usage(format!("missing parameter '{name}'")))?;
        let rg = match self.mode {
            GradMode::Off => false,
            GradMode::Trainable => p.trainable,
            GradMode::All => true,
        };
        let v = self.g.leaf_shared(Arc::clone(&p.value), rg);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    /// `x · W + b` for parameters `{prefix}.w` (`[in, out]`) and `{prefix}.b`,
    /// plus the low-rank delta `x · A · B · scale` when `{prefix}.lora_a` exists.
    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let w = self.param(&format!("{prefix}.w"))?;
        let b = self.param(&format!("{prefix}.b"))?;
        let mut y = self.g.matmul(x, w)?;
        let lora_a = format!("{prefix}.lora_a");
        if self.store.contains(&lora_a) {
            let a = self.param(&lora_a)?;
            let bb = self.param(&format!("{prefix}.lora_b"))?;
            let down = self.g.matmul(x, a)?;
            let up = self.g.matmul(down, bb)?;
            let delta = self.g.scale(up, self.lora_scale);
            y = self.g.add(y, delta)?;
        }
        self.g.add_row(y, b)
    }

    pub fn bound(&self) -> &BTreeMap<String, Var> {
        &self.bound
    }

    /// Gradients of every bound parameter that recorded one.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.bound
            .iter()
            .filter_map(|(n, &v)| grads.get(v).map(|t| (n.clone(), t)))
            .collect()
    }
}
