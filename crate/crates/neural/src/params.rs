use crate::error::{NeuralError, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered table of learnable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(NeuralError::Param(format!("duplicate parameter {name}")));
        }
        self.entries.push((name, value));
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.entries[id.0].1
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<F>)> {
        self.entries
            .iter()
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast()))
                .collect(),
        }
    }

    /// Copies every tensor whose name and shape match from `other`; returns
    /// the names that were copied.
    pub fn load_matching(&mut self, other: &ParamStore<F>) -> Vec<String> {
        let mut copied = Vec::new();
        for (name, t) in &mut self.entries {
            if let Some(id) = other.find(name) {
                let src = other.get(id);
                if src.shape() == t.shape() {
                    *t = src.clone();
                    copied.push(name.clone());
                }
            }
        }
        copied
    }
}
