use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Index of a parameter inside the [`ParamSet`] that allocated it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter tensors with gradient buffers of identical shape.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate parameter name `{name}`"
            )));
        }
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        self.names.push(name);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.values[i])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn grads_mut(&mut self) -> &mut [Tensor] {
        &mut self.grads
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Fresh zero buffers shaped like the parameters, for accumulating
    /// gradients outside the set.
    pub fn zeroed_grads(&self) -> Vec<Tensor> {
        self.values
            .iter()
            .map(|v| Tensor::zeros(v.shape()))
            .collect()
    }

    pub fn accumulate_grads(&mut self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.grads.len() {
            return Err(shape_err(
                "gradient buffer count does not match parameter count",
            ));
        }
        for (g, extra) in self.grads.iter_mut().zip(grads) {
            if g.shape() != extra.shape() {
                return Err(shape_err("gradient buffer shape mismatch"));
            }
            g.add_assign(extra);
        }
        Ok(())
    }

    /// `value -= lr * grad` for every parameter.
    pub fn sgd_step(&mut self, lr: f64) {
        for (v, g) in self.values.iter_mut().zip(&self.grads) {
            for (a, b) in v.data_mut().iter_mut().zip(g.data()) {
                *a -= lr * b;
            }
        }
    }

    /// SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        self.fingerprint_prefix("")
    }

    /// [`fingerprint`](Self::fingerprint) restricted to names starting with
    /// `prefix`.
    pub fn fingerprint_prefix(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, v) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
