use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffmath::{GradMap, Gradients, Tape, Tensor, Value};
use crate::error::{Error, Result};

/// Named parameter tensors of a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: GradMap,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.map.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map.get(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.map.get_mut(name).ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Scalar count over all tensors whose name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.map.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(_, v)| v.numel()).sum()
    }

    pub fn as_map(&self) -> &GradMap {
        &self.map
    }

    pub fn as_map_mut(&mut self) -> &mut GradMap {
        &mut self.map
    }

    /// Places every parameter on `tape`. Names for which `trainable`
    /// returns false become constants.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: impl Fn(&str) -> bool) -> Bound<'t> {
        let map = self
            .map
            .iter()
            .map(|(k, v)| {
                let val = if trainable(k) { tape.param(v.clone()) } else { tape.constant(v.clone()) };
                (k.clone(), val)
            })
            .collect();
        Bound { map }
    }

    /// Binds everything as constants.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.bind(tape, |_| false)
    }
}

/// Parameters living on a tape for one forward pass.
pub struct Bound<'t> {
    map: BTreeMap<String, Value<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Value<'t>> {
        self.map.get(name).copied().ok_or_else(|| Error::InvalidArgument(format!("no parameter named {name}")))
    }

    /// Gradients of the trainable parameters whose name starts with `prefix`.
    pub fn gradients(&self, grads: &Gradients, prefix: &str) -> GradMap {
        self.map.iter().filter(|(k, v)| k.starts_with(prefix) && v.requires_grad()).map(|(k, v)| (k.clone(), grads.get(*v))).collect()
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), or zeros.
pub(crate) fn init_weight(rng: &mut impl Rng, shape: &[usize], fan_in: usize, zero: bool) -> Tensor {
    let n: usize = shape.iter().product();
    if zero {
        return Tensor::zeros(shape);
    }
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::new(shape, (0..n).map(|_| normal.sample(rng)).collect())
}
