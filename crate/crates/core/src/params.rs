//! Named parameter storage shared by layers, the optimizer, and checkpoints.

use crate::error::{Error, Result};
use crate::real::Real;
use crate::rng::Prng;
use crate::tensor::{numel, Tensor};

/// Stable handle to one parameter tensor in a `ParamStore`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

pub struct ParamEntry<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
}

/// Flat registry of parameters; layers hold `ParamId`s into it.
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
}

/// Initialization recipe for a freshly registered parameter.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Normal truncated at two standard deviations.
    TruncNormal { std: f64 },
    /// Kaiming fan-in: std = sqrt(2 / fan_in).
    KaimingConv { fan_in: usize },
    /// Xavier-style: std = 1 / sqrt(fan_in); used by the spectral instrument.
    ScaledNormal { fan_in: usize },
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> ParamStore<T> {
        ParamStore { entries: Vec::new() }
    }

    pub fn register(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut Prng) -> ParamId {
        let n = numel(shape);
        let value: Vec<T> = match init {
            Init::Zeros => vec![T::ZERO; n],
            Init::Ones => vec![T::ONE; n],
            Init::TruncNormal { std } => {
                (0..n).map(|_| T::from_f64(rng.trunc_normal(std))).collect()
            }
            Init::KaimingConv { fan_in } => {
                let std = (2.0 / fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64(rng.normal() * std)).collect()
            }
            Init::ScaledNormal { fan_in } => {
                let std = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| T::from_f64(rng.normal() * std)).collect()
            }
        };
        self.register_value(name, shape, value)
    }

    pub fn register_value(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> ParamId {
        assert_eq!(numel(shape), value.len(), "param {name} shape/value mismatch");
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            shape: shape.to_vec(),
            value,
        });
        id
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Vec<T>) {
        assert_eq!(value.len(), self.entries[id.0].value.len());
        self.entries[id.0].value = value;
    }

    pub fn update_value(&mut self, id: ParamId, f: impl FnMut(&mut T)) {
        self.entries[id.0].value.iter_mut().for_each(f);
    }

    pub fn nudge(&mut self, id: ParamId, coord: usize, delta: f64) {
        let v = &mut self.entries[id.0].value[coord];
        *v = T::from_f64(v.to_f64() + delta);
    }

    pub fn tensor(&self, id: ParamId) -> Tensor<T> {
        Tensor::new(self.entries[id.0].shape.clone(), self.entries[id.0].value.clone())
            .expect("entry invariant")
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn load_named(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        let id = self
            .find(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name:?}")))?;
        if self.entries[id.0].shape != t.shape() {
            return Err(Error::dim(format!(
                "parameter {name:?} has shape {:?}, file holds {:?}",
                self.entries[id.0].shape,
                t.shape()
            )));
        }
        self.entries[id.0].value = t.to_vec();
        Ok(())
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<T>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_and_lookup() {
        let mut rng = Prng::new(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let a = store.register("w1", &[2, 3], Init::TruncNormal { std: 0.02 }, &mut rng);
        let b = store.register("b1", &[3], Init::Zeros, &mut rng);
        assert_eq!(store.entry(a).value.len(), 6);
        assert!(store.entry(b).value.iter().all(|&v| v == 0.0));
        assert_eq!(store.find("w1"), Some(a));
        assert!(store.entry(a).value.iter().all(|&v| v.abs() <= 0.04));
    }
}
