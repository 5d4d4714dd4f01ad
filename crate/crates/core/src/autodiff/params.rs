use std::collections::BTreeMap;

use super::graph::{Adjoints, Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors with a stable (lexicographic) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Lexicographic by name; stable across runs.
    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Create differentiable leaves for every parameter, in iteration
    /// order, and remember the node ids.
    pub fn bind(&self, g: &mut Graph) -> Result<ParamBinding> {
        let mut nodes = BTreeMap::new();
        for (name, value) in &self.params {
            let id = g.leaf(value.clone())?;
            nodes.insert(name.clone(), id);
        }
        Ok(ParamBinding { nodes })
    }

    /// Bind every parameter as a constant: the graph can use the values
    /// but no gradient flows into them (a detached model).
    pub fn bind_frozen(&self, g: &mut Graph) -> Result<ParamBinding> {
        let mut nodes = BTreeMap::new();
        for (name, value) in &self.params {
            let id = g.constant(value.clone())?;
            nodes.insert(name.clone(), id);
        }
        Ok(ParamBinding { nodes })
    }
}

/// Map from parameter names to their leaf nodes inside one graph.
#[derive(Debug, Clone)]
pub struct ParamBinding {
    nodes: BTreeMap<String, NodeId>,
}

impl ParamBinding {
    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))
    }

    /// Gradient for every bound parameter; parameters the loss never
    /// touched get zero gradients of matching shape.
    pub fn gradients(&self, g: &Graph, adjoints: &Adjoints) -> Gradients {
        let mut out = BTreeMap::new();
        for (name, &id) in &self.nodes {
            let shape = g.value(id).shape().to_vec();
            out.insert(name.clone(), adjoints.get_or_zeros(id, &shape));
        }
        Gradients { grads: out }
    }
}

/// Named gradient tensors, shapes mirroring the originating ParamSet.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }
}
