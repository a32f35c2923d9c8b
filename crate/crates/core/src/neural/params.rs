use super::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl ParamTensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }

    /// Views a 4-D parameter (conv kernel) as a tensor.
    pub fn to_tensor4(&self) -> Tensor4 {
        let dims: [usize; 4] = self.shape.as_slice().try_into().expect("4-D parameter");
        Tensor4::from_vec(dims, self.values.clone()).expect("consistent parameter shape")
    }
}

/// Ordered collection of named tensors. Used both for weights and for their gradients.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

impl ParamStore {
    pub fn new(tensors: Vec<ParamTensor>) -> Result<Self> {
        let mut names: Vec<&str> = tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate parameter name"));
        }
        for t in &tensors {
            if t.values.len() != t.shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} has {} values for shape {:?}",
                    t.name,
                    t.values.len(),
                    t.shape
                )));
            }
        }
        Ok(Self { tensors })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| ParamTensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&ParamTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamTensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub(crate) fn expect(&self, name: &str) -> &ParamTensor {
        self.get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub(crate) fn expect_mut(&mut self, name: &str) -> &mut ParamTensor {
        self.get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Checks that `other` has the same names and shapes in the same order.
    pub fn check_compatible(&self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters vs {}",
                self.tensors.len(),
                other.tensors.len()
            )));
        }
        for (a, b) in self.tensors.iter().zip(&other.tensors) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} {:?} vs {} {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    /// Flat scalar addressing across all tensors, in store order.
    pub fn locate(&self, mut flat: usize) -> Option<(usize, usize)> {
        for (i, t) in self.tensors.iter().enumerate() {
            if flat < t.values.len() {
                return Some((i, flat));
            }
            flat -= t.values.len();
        }
        None
    }

    pub fn scalar(&self, tensor: usize, offset: usize) -> f64 {
        self.tensors[tensor].values[offset]
    }

    pub fn scalar_mut(&mut self, tensor: usize, offset: usize) -> &mut f64 {
        &mut self.tensors[tensor].values[offset]
    }

    pub fn all_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.values.iter().all(|&v| v == 0.0))
    }
}
