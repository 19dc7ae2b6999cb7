use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use wide::{f32x16, f64x8};

/// Element type of a [`Tensor`](crate::Tensor).
///
/// `f32` is the production precision; `f64` is used for gradient checks.
pub trait Scalar:
    Float + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    /// Sixteen lanes of `Self` for the convolution inner loops.
    type Lanes: Lanes<Self>;

    fn lit(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    type Lanes = f32x16;

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    type Lanes = F64x16;

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A vector of [`LANES`] scalars. `mul_add` is fused when the target has FMA;
/// either way a given build always rounds the same way.
pub trait Lanes<T: Copy>: Copy + Send + Sync {
    fn zero() -> Self;
    fn splat(v: T) -> Self;
    /// Reads the first [`LANES`] elements of `src`.
    fn load(src: &[T]) -> Self;
    /// `self * b + acc`
    fn mul_add(self, b: Self, acc: Self) -> Self;
    fn add(self, b: Self) -> Self;
    fn mul(self, b: Self) -> Self;
    fn max(self, b: Self) -> Self;
    fn exp(self) -> Self;
    fn to_array(self) -> [T; LANES];

    /// Writes all lanes to the first [`LANES`] elements of `dst`.
    #[inline(always)]
    fn store(self, dst: &mut [T]) {
        dst[..LANES].copy_from_slice(&self.to_array());
    }

    /// Sum of the lanes, in lane order.
    #[inline(always)]
    fn sum_lanes(self) -> T
    where
        T: Scalar,
    {
        self.to_array().iter().fold(T::zero(), |a, &v| a + v)
    }
}

pub const LANES: usize = 16;

impl Lanes<f32> for f32x16 {
    #[inline(always)]
    fn zero() -> Self {
        f32x16::ZERO
    }

    #[inline(always)]
    fn splat(v: f32) -> Self {
        f32x16::splat(v)
    }

    #[inline(always)]
    fn load(src: &[f32]) -> Self {
        let a: [f32; LANES] = src[..LANES].try_into().expect("16 lanes");
        f32x16::from(a)
    }

    #[inline(always)]
    fn mul_add(self, b: Self, acc: Self) -> Self {
        f32x16::mul_add(self, b, acc)
    }

    #[inline(always)]
    fn add(self, b: Self) -> Self {
        self + b
    }

    #[inline(always)]
    fn mul(self, b: Self) -> Self {
        self * b
    }

    #[inline(always)]
    fn max(self, b: Self) -> Self {
        f32x16::max(self, b)
    }

    #[inline(always)]
    fn exp(self) -> Self {
        f32x16::exp(self)
    }

    #[inline(always)]
    fn to_array(self) -> [f32; LANES] {
        f32x16::to_array(self)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct F64x16([f64x8; 2]);

impl Lanes<f64> for F64x16 {
    #[inline(always)]
    fn zero() -> Self {
        F64x16([f64x8::ZERO; 2])
    }

    #[inline(always)]
    fn splat(v: f64) -> Self {
        F64x16([f64x8::splat(v); 2])
    }

    #[inline(always)]
    fn load(src: &[f64]) -> Self {
        let lo: [f64; 8] = src[..8].try_into().expect("8 lanes");
        let hi: [f64; 8] = src[8..LANES].try_into().expect("8 lanes");
        F64x16([f64x8::from(lo), f64x8::from(hi)])
    }

    #[inline(always)]
    fn mul_add(self, b: Self, acc: Self) -> Self {
        F64x16([
            self.0[0].mul_add(b.0[0], acc.0[0]),
            self.0[1].mul_add(b.0[1], acc.0[1]),
        ])
    }

    #[inline(always)]
    fn add(self, b: Self) -> Self {
        F64x16([self.0[0] + b.0[0], self.0[1] + b.0[1]])
    }

    #[inline(always)]
    fn mul(self, b: Self) -> Self {
        F64x16([self.0[0] * b.0[0], self.0[1] * b.0[1]])
    }

    #[inline(always)]
    fn max(self, b: Self) -> Self {
        F64x16([self.0[0].max(b.0[0]), self.0[1].max(b.0[1])])
    }

    #[inline(always)]
    fn exp(self) -> Self {
        F64x16([self.0[0].exp(), self.0[1].exp()])
    }

    #[inline(always)]
    fn to_array(self) -> [f64; LANES] {
        let mut out = [0.0; LANES];
        out[..8].copy_from_slice(&self.0[0].to_array());
        out[8..].copy_from_slice(&self.0[1].to_array());
        out
    }
}
