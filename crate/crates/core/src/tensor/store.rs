//! Named trainable parameters with parallel gradient accumulators.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// Trainable parameters, keyed by name, with one gradient buffer per
/// parameter. Names are unique by construction of the map; gradient shapes
/// always mirror parameter shapes.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape().to_vec()));
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn grad_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.grads.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Number of scalar parameters across all tensors.
    pub fn parameter_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.values_mut().fill(0.0);
        }
    }

    /// Scales every gradient buffer, e.g. to average over a mini-batch.
    pub fn scale_grads(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.values_mut() {
                *v *= factor;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let checkpoint = Checkpoint {
            format_version: FORMAT_VERSION,
            params: self.params.clone(),
        };
        serde_json::to_writer(BufWriter::new(file), &checkpoint)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let checkpoint: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
        if checkpoint.format_version != FORMAT_VERSION {
            return Err(Error::FormatVersion(checkpoint.format_version));
        }
        let mut store = ParameterStore::new();
        for (name, tensor) in checkpoint.params {
            tensor.ensure_finite(&name)?;
            store.insert(&name, tensor);
        }
        Ok(store)
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format_version: u32,
    params: BTreeMap<String, Tensor>,
}

/// Tracks which parameters one forward pass placed on the tape.
///
/// Parameters become tape leaves lazily, the first time a pass touches them;
/// a pass that never reads a parameter (for instance an attention override
/// skipping the attention weights) never materializes it on the tape.
#[derive(Default)]
pub struct TapeBinding {
    bound: BTreeMap<String, Var>,
}

impl TapeBinding {
    pub fn new() -> Self {
        TapeBinding::default()
    }

    /// Leaf for parameter `name`, created on first use.
    pub fn param(&mut self, tape: &mut Tape, store: &ParameterStore, name: &str) -> Result<Var> {
        if let Some(&var) = self.bound.get(name) {
            return Ok(var);
        }
        let tensor = store
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name:?}")))?;
        let var = tape.leaf(tensor.clone())?;
        self.bound.insert(name.to_string(), var);
        Ok(var)
    }

    pub fn bound_var(&self, name: &str) -> Option<Var> {
        self.bound.get(name).copied()
    }

    /// Adds the tape gradients of every bound parameter into the store's
    /// gradient buffers.
    pub fn accumulate_grads(
        &self,
        grads: &super::tape::Gradients,
        store: &mut ParameterStore,
    ) -> Result<()> {
        for (name, &var) in &self.bound {
            let Some(g) = grads.wrt(var) else { continue };
            let slot = store
                .grad_mut(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name:?}")))?;
            for (acc, u) in slot.values_mut().iter_mut().zip(g.values()) {
                *acc += u;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut store = ParameterStore::new();
        store.insert("b", Tensor::vector(vec![1.5, -2.25]));
        store.insert("a", Tensor::matrix(1, 2, vec![0.1, 0.2]).unwrap());
        store.save(&path).unwrap();
        let loaded = ParameterStore::load(&path).unwrap();
        assert_eq!(loaded.get("a"), store.get("a"));
        assert_eq!(loaded.get("b"), store.get("b"));
        assert_eq!(loaded.len(), 2);
    }

    #[test]
    fn rejects_unknown_format_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        std::fs::write(&path, r#"{"format_version":99,"params":{}}"#).unwrap();
        assert!(matches!(
            ParameterStore::load(&path),
            Err(Error::FormatVersion(99))
        ));
    }

    #[test]
    fn binding_is_lazy_and_accumulates() {
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::vector(vec![2.0, 3.0]));
        store.insert("unused", Tensor::vector(vec![f64::MAX]));

        let mut tape = Tape::new();
        let mut binding = TapeBinding::new();
        let w = binding.param(&mut tape, &store, "w").unwrap();
        let w2 = binding.param(&mut tape, &store, "w").unwrap();
        assert_eq!(w, w2);
        assert!(binding.bound_var("unused").is_none());

        let y = tape.hadamard(w, w).unwrap();
        let y = tape.sum(y).unwrap();
        let grads = tape.backward(y).unwrap();
        binding.accumulate_grads(&grads, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap().values(), &[4.0, 6.0]);
        assert_eq!(store.grad("unused").unwrap().values(), &[0.0]);
    }
}
