use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// A square, normalized blur kernel with odd side.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    size: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// The identity kernel.
    pub fn delta() -> Self {
        BlurKernel {
            size: 1,
            weights: vec![1.0],
        }
    }

    /// Isotropic Gaussian with radius `ceil(3σ)`; `σ = 0` gives [`delta`](Self::delta).
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::Config(format!("blur sigma must be finite and >= 0, got {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(Self::delta());
        }
        let r = (3.0 * sigma).ceil() as isize;
        let g: Vec<f64> = (-r..=r)
            .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let weights: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        Self::new((2 * r + 1) as usize, weights)
    }

    /// Normalizes `weights` (row-major, `size × size`) to sum to one.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self> {
        if size.is_multiple_of(2) || weights.len() != size * size {
            return Err(Error::Config(format!(
                "blur kernel must be odd and square, got side {size} with {} weights",
                weights.len()
            )));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("blur kernel weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("blur kernel has zero mass".into()));
        }
        Ok(BlurKernel {
            size,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn is_delta(&self) -> bool {
        self.size == 1
    }

    /// Correlates every plane with the kernel, replicating edge pixels.
    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        if self.is_delta() {
            return x.clone();
        }
        let s: Shape = x.shape();
        let r = (self.size / 2) as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut data = Vec::with_capacity(s.numel());
        for plane in x.data().chunks(s.plane().max(1)) {
            for y in 0..s.h {
                for xx in 0..s.w {
                    let mut acc = 0.0;
                    for ky in 0..self.size {
                        let sy = clamp(y as isize + ky as isize - r, s.h);
                        let row = &plane[sy * s.w..(sy + 1) * s.w];
                        let wrow = &self.weights[ky * self.size..(ky + 1) * self.size];
                        for (kx, &w) in wrow.iter().enumerate() {
                            acc += w * row[clamp(xx as isize + kx as isize - r, s.w)].as_f64();
                        }
                    }
                    data.push(T::lit(acc));
                }
            }
        }
        Tensor::new(s, data).expect("same shape")
    }
}
