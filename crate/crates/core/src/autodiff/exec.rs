//! One model definition, two ways to run it.
//!
//! Layers are written once against [`Exec`]. [`Eager`] evaluates directly on
//! shared tensors for inference; [`Recorder`] appends every op to a [`Tape`]
//! so the same forward pass can be differentiated.

use std::sync::Arc;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::model::ParamId;
use crate::scalar::Scalar;
use crate::tensor::{self, Shape, Tensor};

/// Evaluation backend for the model's forward pass.
pub trait Exec<T: Scalar> {
    type Value: Clone;

    /// True when ops are being recorded for a backward pass.
    const RECORDING: bool;

    fn param(&mut self, id: ParamId) -> Self::Value;
    fn constant(&mut self, t: Tensor<T>) -> Self::Value;
    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T>;

    fn shape(&self, v: &Self::Value) -> Shape {
        self.value(v).shape()
    }

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::Value>;
    fn leaky_relu(&mut self, x: &Self::Value, slope: T) -> Self::Value;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Self::Value;
    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value>;

    /// Embedded-Gaussian attention over spatial positions.
    ///
    /// `theta`, `phi` and `g` are `(n, c, h, w)`. With `P = h·w`, each output
    /// position `i` is `Σ_j softmax_j(θ_i · φ_j) g_j`, returned as `(n, c, h, w)`.
    fn attention(&mut self, theta: &Self::Value, phi: &Self::Value, g: &Self::Value) -> Result<Self::Value>;
}

/// Direct evaluation over a parameter slice.
pub struct Eager<'a, T> {
    params: &'a [Arc<Tensor<T>>],
}

impl<'a, T: Scalar> Eager<'a, T> {
    pub fn new(params: &'a [Arc<Tensor<T>>]) -> Self {
        Eager { params }
    }
}

impl<T: Scalar> Exec<T> for Eager<'_, T> {
    type Value = Arc<Tensor<T>>;
    const RECORDING: bool = false;

    fn param(&mut self, id: ParamId) -> Self::Value {
        self.params[id.index()].clone()
    }

    fn constant(&mut self, t: Tensor<T>) -> Self::Value {
        Arc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        b: Option<&Self::Value>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::Value> {
        let bias = b.map(|b| b.data());
        Ok(Arc::new(tensor::conv2d_raw(x, w, bias, stride, pad)?))
    }

    fn leaky_relu(&mut self, x: &Self::Value, slope: T) -> Self::Value {
        Arc::new(tensor::leaky_relu(x, slope))
    }

    fn relu(&mut self, x: &Self::Value) -> Self::Value {
        Arc::new(tensor::relu(x))
    }

    fn sigmoid(&mut self, x: &Self::Value) -> Self::Value {
        Arc::new(tensor::sigmoid(x))
    }

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::add(a, b)?))
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        Ok(Arc::new(tensor::mul(a, b)?))
    }

    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|x| x.as_ref()).collect();
        Ok(Arc::new(tensor::concat_channels(&refs)?))
    }

    fn global_avg_pool(&mut self, x: &Self::Value) -> Self::Value {
        Arc::new(tensor::global_avg_pool(x))
    }

    fn pixel_shuffle(&mut self, x: &Self::Value, r: usize) -> Result<Self::Value> {
        Ok(Arc::new(tensor::pixel_shuffle(x, r)?))
    }

    fn attention(&mut self, theta: &Self::Value, phi: &Self::Value, g: &Self::Value) -> Result<Self::Value> {
        let (y, _) = tensor::attention(theta, phi, g, false)?;
        Ok(Arc::new(y))
    }
}

/// Records the forward pass on a tape, with every model parameter bound as a
/// trainable leaf.
pub struct Recorder<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: Vec<Var>,
    max_positions: usize,
}

impl<'a, T: Scalar> Recorder<'a, T> {
    /// Binds `params` as trainable leaves. Attention over more than
    /// `max_positions` positions is refused, since the recorded path stores
    /// the full affinity matrix.
    pub fn new(tape: &'a mut Tape<T>, params: &[Arc<Tensor<T>>], max_positions: usize) -> Self {
        let params = params.iter().map(|p| tape.param_shared(p.clone())).collect();
        Recorder {
            tape,
            params,
            max_positions,
        }
    }

    /// Uses existing tape variables as the parameters, `vars[i]` standing
    /// for `ParamId` index `i`.
    pub fn with_vars(tape: &'a mut Tape<T>, vars: Vec<Var>, max_positions: usize) -> Self {
        Recorder {
            tape,
            params: vars,
            max_positions,
        }
    }

    /// Tape variables of the bound parameters, in parameter order.
    pub fn param_vars(&self) -> &[Var] {
        &self.params
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }
}

/// Largest tile side (a multiple of 4) whose position count fits `budget`.
pub(crate) fn suggested_tile(budget: usize) -> usize {
    let side = (budget as f64).sqrt().floor() as usize;
    (side / 4 * 4).max(4)
}

impl<T: Scalar> Exec<T> for Recorder<'_, T> {
    type Value = Var;
    const RECORDING: bool = true;

    fn param(&mut self, id: ParamId) -> Var {
        self.params[id.index()]
    }

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        self.tape.value(*v)
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Result<Var> {
        self.tape.conv2d(*x, *w, b.copied(), stride, pad)
    }

    fn leaky_relu(&mut self, x: &Var, slope: T) -> Var {
        self.tape.leaky_relu(*x, slope)
    }

    fn relu(&mut self, x: &Var) -> Var {
        self.tape.relu(*x)
    }

    fn sigmoid(&mut self, x: &Var) -> Var {
        self.tape.sigmoid(*x)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.add(*a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        self.tape.mul(*a, *b)
    }

    fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        self.tape.concat(xs)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Var {
        self.tape.global_avg_pool(*x)
    }

    fn pixel_shuffle(&mut self, x: &Var, r: usize) -> Result<Var> {
        self.tape.pixel_shuffle(*x, r)
    }

    fn attention(&mut self, theta: &Var, phi: &Var, g: &Var) -> Result<Var> {
        let p = self.tape.shape(*theta).plane();
        if p > self.max_positions {
            return Err(Error::PositionBudget {
                positions: p,
                budget: self.max_positions,
                suggested_tile: suggested_tile(self.max_positions),
            });
        }
        self.tape.attention(*theta, *phi, *g)
    }
}
