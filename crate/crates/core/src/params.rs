//! Named parameter collections and their projection into a graph.
//!
//! Networks keep their weights in a `Params` map ordered by name, so every
//! sweep over parameters (optimizer updates, checkpoint serialization,
//! gradient reads) visits them in one deterministic order. Binding a
//! `Params` into a `Graph` produces a `BoundParams`, whose variables are
//! shared by every forward call on that graph; a model applied twice in one
//! step (as in cycle reconstruction) therefore accumulates gradients onto a
//! single set of leaves.

use std::collections::BTreeMap;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Name -> tensor map with deterministic iteration order.
#[derive(Clone, Default)]
pub struct Params {
    inner: BTreeMap<String, Tensor>,
}

impl std::fmt::Debug for Params {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut map = f.debug_map();
        for (name, t) in &self.inner {
            map.entry(name, &t.shape());
        }
        map.finish()
    }
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor under a fresh name.
    pub fn insert(&mut self, name: &str, t: Tensor) -> Result<()> {
        if self.inner.contains_key(name) {
            return Err(Error::Usage(format!("parameter {name:?} registered twice")));
        }
        self.inner.insert(name.to_string(), t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.inner
            .get(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))
    }

    /// Replaces the payload of an existing parameter; the shape must match.
    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        let slot = self
            .inner
            .get_mut(name)
            .ok_or_else(|| Error::Usage(format!("unknown parameter {name:?}")))?;
        if slot.shape() != t.shape() {
            return Err(Error::Dim(format!(
                "parameter {name:?} has shape {:?}, replacement has {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.inner.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.inner.keys()
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.inner.values().map(Tensor::numel).sum()
    }

    /// True when both collections hold bitwise-identical tensors under the
    /// same names.
    pub fn bit_eq(&self, other: &Params) -> bool {
        self.inner.len() == other.inner.len()
            && self
                .inner
                .iter()
                .zip(other.inner.iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Parameter set projected into one graph, either as trainable leaves or as
/// frozen constants.
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl BoundParams {
    /// Binds every parameter as a gradient-accumulating leaf.
    pub fn bind_trainable(g: &mut Graph, p: &Params) -> Self {
        let vars = p.iter().map(|(name, t)| (name.clone(), g.param(t))).collect();
        BoundParams { vars, trainable: true }
    }

    /// Binds every parameter as a constant: no gradients accumulate and the
    /// backward sweep never descends into these subtrees. The adversary is
    /// bound this way during the opposite player's step.
    pub fn bind_frozen(g: &mut Graph, p: &Params) -> Self {
        let vars = p.iter().map(|(name, t)| (name.clone(), g.constant(t))).collect();
        BoundParams { vars, trainable: false }
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Usage(format!("parameter {name:?} is not bound")))
    }

    /// Collects the gradients accumulated on the bound leaves. Parameters
    /// the loss never touched are absent from the result.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Vec<f32>> {
        self.vars
            .iter()
            .filter_map(|(name, &v)| g.grad(v).map(|gr| (name.clone(), gr.to_vec())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_rejects_duplicates() {
        let mut p = Params::new();
        p.insert("w", Tensor::zeros(&[2])).unwrap();
        assert!(p.insert("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn set_enforces_shape() {
        let mut p = Params::new();
        p.insert("w", Tensor::zeros(&[2, 3])).unwrap();
        assert!(p.set("w", Tensor::zeros(&[3, 2])).is_err());
        assert!(p.set("w", Tensor::full(&[2, 3], 1.0)).is_ok());
        assert_eq!(p.get("w").unwrap().data()[0], 1.0);
    }

    #[test]
    fn iteration_is_name_ordered() {
        let mut p = Params::new();
        p.insert("b.z", Tensor::zeros(&[1])).unwrap();
        p.insert("a.k", Tensor::zeros(&[1])).unwrap();
        p.insert("b.a", Tensor::zeros(&[1])).unwrap();
        let names: Vec<_> = p.names().cloned().collect();
        assert_eq!(names, ["a.k", "b.a", "b.z"]);
        assert_eq!(p.scalar_count(), 3);
    }

    #[test]
    fn frozen_binding_accumulates_no_gradients() {
        let mut p = Params::new();
        p.insert("w", Tensor::full(&[3], 2.0)).unwrap();

        let mut g = Graph::new();
        let frozen = BoundParams::bind_frozen(&mut g, &p);
        let w = frozen.var("w").unwrap();
        let y = g.mul(w, w).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        assert!(frozen.grads(&g).is_empty());

        let mut g = Graph::new();
        let bound = BoundParams::bind_trainable(&mut g, &p);
        let w = bound.var("w").unwrap();
        let y = g.mul(w, w).unwrap();
        let s = g.sum_all(y).unwrap();
        g.backward(s).unwrap();
        let grads = bound.grads(&g);
        assert_eq!(grads["w"], vec![4.0, 4.0, 4.0]);
    }
}
