use std::collections::BTreeMap;

use crate::{Error, Result};

/// Handle to a tensor inside a [`ParameterStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, row-major tensor of 64-bit values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                name,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Leading dimension; a vector is a column.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Every trainable tensor of a model, addressable by unique name.
///
/// Registration order is preserved and defines both iteration order and
/// the layout of [`Gradients`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    tensors: Vec<Tensor>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let tensor = Tensor::new(name, shape, data)?;
        let id = ParamId(self.tensors.len());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Tensor> {
        Ok(self.get(self.id(name)?))
    }

    /// Overwrites the values of a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, data: Vec<f64>) -> Result<()> {
        let id = self.id(name)?;
        let tensor = &mut self.tensors[id.0];
        if tensor.data.len() != data.len() {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: tensor.data.len(),
                actual: data.len(),
            });
        }
        tensor.data = data;
        Ok(())
    }

    pub fn fill(&mut self, name: &str, value: f64) -> Result<()> {
        let id = self.id(name)?;
        self.tensors[id.0].data.iter_mut().for_each(|x| *x = value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        match self
            .tensors
            .iter()
            .find(|t| t.data.iter().any(|x| !x.is_finite()))
        {
            Some(t) => Err(Error::NonFiniteParameter(t.name.clone())),
            None => Ok(()),
        }
    }
}

/// Gradient buffers laid out like the store that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(store: &ParameterStore) -> Self {
        Self {
            grads: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.grads[id.0]
    }

    pub fn by_name<'a>(&'a self, store: &ParameterStore, name: &str) -> Result<&'a [f64]> {
        Ok(self.get(store.id(name)?))
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.grads
            .iter_mut()
            .flat_map(|g| g.iter_mut())
            .for_each(|g| *g *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.grads
            .iter()
            .enumerate()
            .map(|(i, g)| (ParamId(i), g.as_slice()))
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}
