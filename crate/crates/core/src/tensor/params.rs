//! Named parameter registry.
//!
//! Every trainable weight in the artifact lives here under a unique
//! dotted name ("llm.block0.attn.wq"). Names drive checkpoint layout,
//! freeze sets, and hashing, so registration order is deterministic.

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    /// Raw index, used to key finite-difference override maps.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Default)]
pub struct Params {
    entries: Vec<(String, Tensor)>,
}

impl Params {
    pub fn new() -> Self {
        Params::default()
    }

    pub fn register(&mut self, name: impl Into<String>, mut tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.lookup(&name).is_none(),
            "duplicate parameter name {name}"
        );
        tensor.requires_grad = true;
        tensor.grad = Some(vec![0.0; tensor.data.len()]);
        self.entries.push((name, tensor));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.entries
            .iter()
            .position(|(n, _)| n == name)
            .map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn ids_by_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (n, _))| n.starts_with(prefix))
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Ids of parameters that currently require gradients.
    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, (_, t))| t.requires_grad)
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Freeze or unfreeze every parameter under a name prefix. Freezing
    /// drops the gradient buffer so frozen tensors cannot enter an
    /// optimizer at all.
    pub fn set_trainable_by_prefix(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in &mut self.entries {
            if name.starts_with(prefix) {
                t.requires_grad = trainable;
                if trainable {
                    if t.grad.is_none() {
                        t.grad = Some(vec![0.0; t.data.len()]);
                    }
                } else {
                    t.grad = None;
                }
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            if let Some(g) = &mut t.grad {
                g.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &[f32]) -> Result<()> {
        let t = &mut self.entries[id.0].1;
        match &mut t.grad {
            Some(g) => {
                if g.len() != delta.len() {
                    return Err(Error::dim("gradient length mismatch"));
                }
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi += di;
                }
                Ok(())
            }
            None => Ok(()), // frozen parameter: gradient silently dropped
        }
    }

    /// Total number of scalar parameters under a prefix.
    pub fn count_by_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// SHA-256 over the raw little-endian bytes of every tensor under a
    /// prefix, in name-sorted order. Used to prove freeze invariance.
    pub fn hash_by_prefix(&self, prefix: &str) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut names: Vec<&str> = self
            .entries
            .iter()
            .map(|(n, _)| n.as_str())
            .filter(|n| n.starts_with(prefix))
            .collect();
        names.sort_unstable();
        let mut hasher = Sha256::new();
        for name in names {
            let id = self.lookup(name).unwrap();
            let t = self.get(id);
            hasher.update(name.as_bytes());
            for v in &t.data {
                hasher.update(v.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }

    /// Iterate (name, tensor) pairs in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }
}
