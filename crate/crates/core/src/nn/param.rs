use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Tensor;

/// Uniform initialisation half-width for every weight.
pub const INIT_SCALE: f64 = 0.08;

/// Handle into a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Owns every parameter of a model. Layers refer to entries by [`ParamId`],
/// so a parameter reached from two layers is the same storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let values = (0..n)
            .map(|_| rng.gen_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        self.add(name, Tensor::new(shape, values).expect("shape product"))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        self.params[id.0].value.values()
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        self.params[id.0].value.values_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// Adds `scale * g` into each parameter's gradient.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                for (a, b) in p.grad.values_mut().iter_mut().zip(g) {
                    *a += scale * b;
                }
            }
        }
    }

    /// Empty gradient buffer sized for this store.
    pub fn gradients(&self) -> Gradients {
        Gradients {
            lens: self.params.iter().map(|p| p.value.len()).collect(),
            slots: vec![None; self.params.len()],
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }
}

/// Sparse gradient buffer aligned with a [`ParamStore`]; a slot is allocated
/// the first time a layer writes to it.
#[derive(Clone, Debug)]
pub struct Gradients {
    lens: Vec<usize>,
    slots: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn slot(&mut self, id: ParamId) -> &mut [f64] {
        let len = self.lens[id.0];
        self.slots[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.slots[id.0].as_deref()
    }

    /// Dense copy of the gradient for `id` (zeros if never touched).
    pub fn dense(&self, id: ParamId) -> Vec<f64> {
        self.get(id)
            .map(|g| g.to_vec())
            .unwrap_or_else(|| vec![0.0; self.lens[id.0]])
    }

    pub fn add(&mut self, other: &Gradients) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                let dst = self.slot(ParamId(i));
                for (a, b) in dst.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Drops every slot not in `keep`.
    pub fn retain(&mut self, keep: &[ParamId]) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            if !keep.contains(&ParamId(i)) {
                *slot = None;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.slots.iter().flatten().all(|g| g.iter().all(|&v| v == 0.0))
    }

    pub fn check_finite(&self, store: &ParamStore) -> Result<()> {
        for (i, g) in self.slots.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteGradient {
                        name: store.get(ParamId(i)).name.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}
