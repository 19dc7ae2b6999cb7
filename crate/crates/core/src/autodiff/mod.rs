//! Reverse-mode differentiation over the tensor op set.
//!
//! A [`Tape`] records every op as it is evaluated. Node ids are handed out in
//! evaluation order, so inputs always precede their users and the backward
//! pass simply walks the tape from the loss node down to id 0. When a node
//! feeds several users, its gradient is the sum of their contributions added
//! in that reverse order.

mod exec;
pub mod gradcheck;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Shape, Tensor};
use crate::tensor::ops::{broadcast_kind, broadcast_plane, Broadcast};

pub use exec::{Eager, Exec, Recorder};
pub use gradcheck::{finite_diff_check, finite_diff_check_many, relative_error, GradCheck, GradCheckOptions};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    },
    LeakyRelu { x: Var, slope: T },
    Relu { x: Var },
    Sigmoid { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, k: T },
    Abs { x: Var },
    Square { x: Var },
    Concat { xs: Vec<Var> },
    GlobalAvgPool { x: Var },
    PixelShuffle { x: Var, r: usize },
    Reshape { x: Var },
    TransposeHw { x: Var },
    Matmul { a: Var, b: Var },
    SoftmaxRows { x: Var },
    /// Spatial attention; keeps the affinity matrix for the backward pass.
    Attention { theta: Var, phi: Var, g: Var, affinity: Tensor<T> },
    Sum { x: Var },
    Mean { x: Var },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::LeakyRelu { x, .. }
            | Op::Relu { x }
            | Op::Sigmoid { x }
            | Op::Scale { x, .. }
            | Op::Abs { x }
            | Op::Square { x }
            | Op::GlobalAvgPool { x }
            | Op::PixelShuffle { x, .. }
            | Op::Reshape { x }
            | Op::TransposeHw { x }
            | Op::SoftmaxRows { x }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } | Op::Matmul { a, b } => {
                vec![*a, *b]
            }
            Op::Concat { xs } => xs.clone(),
            Op::Attention { theta, phi, g, .. } => vec![*theta, *phi, *g],
        }
    }
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    trainable: bool,
    /// True when a trainable leaf is reachable through this node's inputs.
    needs_grad: bool,
}

/// Append-only record of evaluated ops.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.push_arc(Arc::new(value), op, false)
    }

    fn push_arc(&mut self, value: Arc<Tensor<T>>, op: Op<T>, trainable: bool) -> Var {
        let needs_grad = trainable || op.inputs().iter().any(|v| self.nodes[v.0].needs_grad);
        let id = self.nodes.len();
        debug_assert!(op.inputs().iter().all(|v| v.0 < id), "inputs must precede users");
        value.debug_check_finite("tape op");
        self.nodes.push(Node {
            value,
            op,
            trainable,
            needs_grad,
        });
        Var(id)
    }

    /// A constant input (no gradient is reported for it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.param_shared(Arc::new(value))
    }

    pub fn param_shared(&mut self, value: Arc<Tensor<T>>) -> Var {
        self.push_arc(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let bias = b.map(|b| self.val(b).data());
        let y = tensor::conv2d_raw(self.val(x), self.val(w), bias, stride, pad)?;
        Ok(self.push(y, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let y = tensor::leaky_relu(self.val(x), slope);
        self.push(y, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = tensor::relu(self.val(x));
        self.push(y, Op::Relu { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = tensor::sigmoid(self.val(x));
        self.push(y, Op::Sigmoid { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::add(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::sub(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::mul(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let y = tensor::scale(self.val(x), k);
        self.push(y, Op::Scale { x, k })
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let y = self.val(x).map(|v| v.abs());
        self.push(y, Op::Abs { x })
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.val(x).map(|v| v * v);
        self.push(y, Op::Square { x })
    }

    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let refs: Vec<&Tensor<T>> = xs.iter().map(|&v| self.val(v)).collect();
        let y = tensor::concat_channels(&refs)?;
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let y = tensor::global_avg_pool(self.val(x));
        self.push(y, Op::GlobalAvgPool { x })
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = tensor::pixel_shuffle(self.val(x), r)?;
        Ok(self.push(y, Op::PixelShuffle { x, r }))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let y = self.val(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape { x }))
    }

    pub fn transpose_hw(&mut self, x: Var) -> Var {
        let y = tensor::transpose_hw(self.val(x));
        self.push(y, Op::TransposeHw { x })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = tensor::matmul(self.val(a), self.val(b))?;
        Ok(self.push(y, Op::Matmul { a, b }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let y = tensor::softmax_rows(self.val(x));
        self.push(y, Op::SoftmaxRows { x })
    }

    /// See [`tensor::attention`].
    pub fn attention(&mut self, theta: Var, phi: Var, g: Var) -> Result<Var> {
        let (y, a) = tensor::attention(self.val(theta), self.val(phi), self.val(g), true)?;
        let affinity = a.expect("affinity kept");
        Ok(self.push(y, Op::Attention { theta, phi, g, affinity }))
    }

    /// Sum of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.val(x).sum());
        self.push(y, Op::Sum { x })
    }

    /// Mean of all elements as a `(1, 1, 1, 1)` scalar.
    pub fn mean(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.val(x).mean());
        self.push(y, Op::Mean { x })
    }

    /// Sign pattern of every input to a non-smooth op (LeakyReLU, ReLU, abs).
    ///
    /// Two evaluations with equal patterns lie on the same smooth piece, which
    /// is what gradient checks use to skip coordinates that straddle a kink.
    pub fn kink_pattern(&self) -> Vec<bool> {
        let mut bits = Vec::new();
        for node in &self.nodes {
            let x = match node.op {
                Op::LeakyRelu { x, .. } | Op::Relu { x } | Op::Abs { x } => x,
                _ => continue,
            };
            bits.extend(self.val(x).data().iter().map(|&v| v > T::zero()));
        }
        bits
    }

    /// Gradients of the scalar `loss` with respect to every trainable leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != Shape::scalar() {
            return Err(Error::shape(
                "backward",
                format!("loss must be a (1, 1, 1, 1) scalar, got {}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        let mut reached: BTreeMap<usize, Tensor<T>> = BTreeMap::new();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
            if node.trainable {
                reached.insert(id, g);
            }
        }
        let params: Vec<(Var, Tensor<T>)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(i, n)| {
                let g = reached
                    .remove(&i)
                    .unwrap_or_else(|| Tensor::zeros(n.value.shape()));
                (Var(i), g)
            })
            .collect();
        for (_, g) in &params {
            g.debug_check_finite("backward");
        }
        Ok(Gradients { grads: params })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.shape(v));
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, stride, pad } => {
                let k = self.shape(w).h;
                if self.needs(x) {
                    let gx = tensor::conv2d_backward_input(g, self.val(w), self.shape(x), stride, pad)?;
                    self.accumulate(grads, x, gx);
                }
                if self.needs(w) {
                    let gw = tensor::conv2d_backward_weight(self.val(x), g, k, stride, pad)?;
                    self.accumulate(grads, w, gw);
                }
                if let Some(b) = b {
                    if self.needs(b) {
                        let gb = tensor::conv2d_backward_bias(g);
                        self.accumulate(grads, b, Tensor::new(self.shape(b), gb)?);
                    }
                }
            }
            &Op::LeakyRelu { x, slope } => {
                let gx = g.zip_map(self.val(x), |g, v| if v > T::zero() { g } else { g * slope })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Relu { x } => {
                let gx = g.zip_map(self.val(x), |g, v| if v > T::zero() { g } else { T::zero() })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Sigmoid { x } => {
                let gx = g.zip_map(&node.value, |g, y| g * y * (T::one() - y))?;
                self.accumulate(grads, x, gx);
            }
            &Op::Add { a, b } => {
                if self.needs(b) {
                    let gb = reduce_to(g, self.shape(b))?;
                    self.accumulate(grads, b, gb);
                }
                self.accumulate(grads, a, g.clone());
            }
            &Op::Sub { a, b } => {
                if self.needs(b) {
                    let gb = reduce_to(g, self.shape(b))?.map(|v| -v);
                    self.accumulate(grads, b, gb);
                }
                self.accumulate(grads, a, g.clone());
            }
            &Op::Mul { a, b } => {
                if self.needs(b) {
                    let prod = g.zip_map(self.val(a), |g, av| g * av)?;
                    self.accumulate(grads, b, reduce_to(&prod, self.shape(b))?);
                }
                if self.needs(a) {
                    let ga = tensor::mul(g, self.val(b))?;
                    self.accumulate(grads, a, ga);
                }
            }
            &Op::Scale { x, k } => self.accumulate(grads, x, tensor::scale(g, k)),
            &Op::Abs { x } => {
                // Subgradient 0 at the kink.
                let gx = g.zip_map(self.val(x), |g, v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                })?;
                self.accumulate(grads, x, gx);
            }
            &Op::Square { x } => {
                let two = T::lit(2.0);
                let gx = g.zip_map(self.val(x), |g, v| g * two * v)?;
                self.accumulate(grads, x, gx);
            }
            Op::Concat { xs } => {
                let mut start = 0;
                for &x in xs {
                    let c = self.shape(x).c;
                    if self.needs(x) {
                        self.accumulate(grads, x, g.slice_channels(start..start + c)?);
                    }
                    start += c;
                }
            }
            &Op::GlobalAvgPool { x } => {
                let s = self.shape(x);
                let inv = T::one() / T::lit(s.plane() as f64);
                let mut data = Vec::with_capacity(s.numel());
                for &gv in g.data() {
                    data.extend(std::iter::repeat_n(gv * inv, s.plane()));
                }
                self.accumulate(grads, x, Tensor::new(s, data)?);
            }
            &Op::PixelShuffle { x, r } => {
                self.accumulate(grads, x, tensor::pixel_unshuffle(g, r)?);
            }
            &Op::Reshape { x } => self.accumulate(grads, x, g.reshape(self.shape(x))?),
            &Op::TransposeHw { x } => self.accumulate(grads, x, tensor::transpose_hw(g)),
            &Op::Matmul { a, b } => {
                if self.needs(a) {
                    let bt = tensor::transpose_hw(self.val(b));
                    self.accumulate(grads, a, tensor::matmul(g, &bt)?);
                }
                if self.needs(b) {
                    let at = tensor::transpose_hw(self.val(a));
                    self.accumulate(grads, b, tensor::matmul(&at, g)?);
                }
            }
            &Op::SoftmaxRows { x } => {
                let y = &node.value;
                let w = y.shape().w;
                let mut data = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(w.max(1)).zip(g.data().chunks(w.max(1))) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&yv, &gv)| a + yv * gv);
                    data.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
                }
                self.accumulate(grads, x, Tensor::new(y.shape(), data)?);
            }
            Op::Attention { theta, phi, g: gv, affinity } => {
                let (dt, dp, dg) =
                    tensor::attention_backward(self.val(*theta), self.val(*phi), self.val(*gv), affinity, g)?;
                self.accumulate(grads, *theta, dt);
                self.accumulate(grads, *phi, dp);
                self.accumulate(grads, *gv, dg);
            }
            &Op::Sum { x } => {
                let s = self.shape(x);
                self.accumulate(grads, x, Tensor::full(s, g.item()));
            }
            &Op::Mean { x } => {
                let s = self.shape(x);
                let v = g.item() / T::lit(s.numel() as f64);
                self.accumulate(grads, x, Tensor::full(s, v));
            }
        }
        Ok(())
    }
}

/// Sums `g` down to a broadcast operand's shape.
fn reduce_to<T: Scalar>(g: &Tensor<T>, target: Shape) -> Result<Tensor<T>> {
    let s = g.shape();
    let kind = broadcast_kind(s, target, "broadcast gradient")?;
    if kind == Broadcast::Same {
        return Ok(g.clone());
    }
    let mut data = vec![T::zero(); target.numel()];
    for (idx, plane) in g.data().chunks(s.plane().max(1)).enumerate() {
        let (n, c) = (idx / s.c, idx % s.c);
        let slot = broadcast_plane(kind, n, c, s.c);
        data[slot] = plane.iter().fold(data[slot], |a, &v| a + v);
    }
    Tensor::new(target, data)
}

/// Gradients of a loss with respect to every trainable leaf of a tape.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<(Var, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a trainable leaf. Unreached leaves have zero gradients.
    pub fn of(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads
            .binary_search_by_key(&v.0, |(var, _)| var.0)
            .ok()
            .map(|i| &self.grads[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<T>)> {
        self.grads.iter().map(|(v, g)| (*v, g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
