use std::collections::BTreeMap;

use super::{Gradients, NumericsError, Tensor};

/// Named trainable tensors with a gradient slot of identical shape per name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        if name.is_empty() {
            return Err(NumericsError::Contract(
                "parameter names must be non-empty".into(),
            ));
        }
        if self.params.contains_key(name) {
            return Err(NumericsError::Contract(format!(
                "duplicate parameter '{name}'"
            )));
        }
        self.grads
            .insert(name.to_string(), Tensor::zeros(value.shape()));
        self.params.insert(name.to_string(), value);
        Ok(())
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

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Overwrites every gradient slot: names present in `grads` take those
    /// values, all others become zero.
    pub fn set_grads(&mut self, grads: &Gradients) -> Result<(), NumericsError> {
        for (name, g) in grads.iter() {
            let p = self.params.get(name).ok_or_else(|| {
                NumericsError::Contract(format!("gradient for unknown parameter '{name}'"))
            })?;
            if p.shape() != g.shape() {
                return Err(NumericsError::Contract(format!(
                    "gradient shape {:?} for '{name}' of shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.zero_grads();
        for (name, g) in grads.iter() {
            self.grads.insert(name.clone(), g.clone());
        }
        Ok(())
    }
}
