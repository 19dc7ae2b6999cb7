use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Exec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Index of a parameter tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Arc<Tensor<T>>] {
        &self.tensors
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix` followed by `.` (or equals it).
    pub fn ids_under(&self, prefix: &str) -> Vec<ParamId> {
        self.names
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                n.as_str() == prefix
                    || (n.starts_with(prefix) && n.as_bytes().get(prefix.len()) == Some(&b'.'))
            })
            .map(|(i, _)| ParamId(i))
            .collect()
    }

    /// Replaces a parameter, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(Error::shape(
                "set parameter",
                format!(
                    "{} has shape {}, got {}",
                    self.names[id.0],
                    self.tensors[id.0].shape(),
                    value.shape()
                ),
            ));
        }
        self.tensors[id.0] = Arc::new(value);
        Ok(())
    }

    /// Mutable access, copying the tensor first if it is shared.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    /// Mutable access to every parameter, copying shared tensors first.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.tensors.iter_mut().map(Arc::make_mut).collect()
    }

    pub fn zero(&mut self, id: ParamId) {
        let s = self.tensors[id.0].shape();
        self.tensors[id.0] = Arc::new(Tensor::zeros(s));
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }
}

/// Allocates and initializes parameters while a network is being built.
pub struct ParamBuilder<T> {
    store: ParamStore<T>,
    rng: ChaCha8Rng,
    gain: f64,
}

impl<T: Scalar> ParamBuilder<T> {
    /// `slope` is the LeakyReLU slope used for the Kaiming gain.
    pub fn new(seed: u64, slope: f64) -> Self {
        ParamBuilder {
            store: ParamStore::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            gain: (2.0 / (1.0 + slope * slope)).sqrt(),
        }
    }

    fn push(&mut self, name: String, value: Tensor<T>) -> ParamId {
        debug_assert!(self.store.find(&name).is_none(), "duplicate parameter {name}");
        self.store.names.push(name);
        self.store.tensors.push(Arc::new(value));
        ParamId(self.store.names.len() - 1)
    }

    /// A `k × k` convolution with padding `k / 2`. Weights are drawn from
    /// `N(0, (gain · scale)² / fan_in)`, biases start at zero.
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, scale: f64) -> Conv {
        let mut c = self.conv_no_bias(name, cin, cout, k, stride, scale);
        c.bias = Some(self.push(format!("{name}.bias"), Tensor::zeros(Shape::new(1, cout, 1, 1))));
        c
    }

    pub fn conv_no_bias(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, scale: f64) -> Conv {
        let fan_in = (cin * k * k) as f64;
        let std = self.gain * scale / fan_in.sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let shape = Shape::new(cout, cin, k, k);
        let data = (0..shape.numel())
            .map(|_| T::lit(normal.sample(&mut self.rng)))
            .collect();
        let weight = self.push(format!("{name}.weight"), Tensor::from_parts(shape, data));
        Conv {
            weight,
            bias: None,
            stride,
            pad: k / 2,
        }
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}

/// Handles to the weight and bias of one convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    pub fn forward<T: Scalar, E: Exec<T>>(&self, ex: &mut E, x: &E::Value) -> Result<E::Value> {
        let w = ex.param(self.weight);
        let b = self.bias.map(|id| ex.param(id));
        ex.conv2d(x, &w, b.as_ref(), self.stride, self.pad)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [Some(self.weight), self.bias].into_iter().flatten().collect()
    }
}
