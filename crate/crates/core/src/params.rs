//! Named parameter tensors.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Name → tensor map with deterministic (sorted) iteration order.
///
/// Used for network parameters, their gradients and optimizer velocity alike.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamMap<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

pub type LayerParams<T = f32> = ParamMap<T>;
pub type Gradients<T = f32> = ParamMap<T>;

impl<T: Scalar> ParamMap<T> {
    pub fn new() -> Self {
        ParamMap {
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor<T>> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamMap<U> {
        ParamMap {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Accumulate `other` into `self`, inserting names not yet present.
    pub fn accumulate(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        match self.tensors.get_mut(name) {
            Some(existing) => existing.add_assign(&t),
            None => {
                self.tensors.insert(name.to_string(), t);
                Ok(())
            }
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            t.ensure_finite(name)?;
        }
        Ok(())
    }
}

impl<T: Scalar> FromIterator<(String, Tensor<T>)> for ParamMap<T> {
    fn from_iter<I: IntoIterator<Item = (String, Tensor<T>)>>(iter: I) -> Self {
        ParamMap {
            tensors: iter.into_iter().collect(),
        }
    }
}
