//! Separable bicubic resampling.
//!
//! Keys cubic with `a = -0.5`, half-pixel centres and edge-clamped taps. When
//! shrinking, the kernel is stretched by the inverse scale so it low-passes
//! before decimating. Tap weights are normalized to sum to one.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const BICUBIC_A: f64 = -0.5;

/// A positive rational scale factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub num: usize,
    pub den: usize,
}

impl Ratio {
    pub const fn new(num: usize, den: usize) -> Self {
        Ratio { num, den }
    }

    pub const fn up(factor: usize) -> Self {
        Ratio::new(factor, 1)
    }

    pub const fn down(factor: usize) -> Self {
        Ratio::new(1, factor)
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn apply(self, len: usize) -> usize {
        // Round half up, exact in integers.
        (2 * len * self.num + self.den) / (2 * self.den)
    }
}

fn cubic(x: f64) -> f64 {
    let a = BICUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * a
    } else {
        0.0
    }
}

/// Source taps and weights for every output coordinate along one axis.
struct AxisTaps {
    taps: Vec<Vec<(usize, f64)>>,
}

impl AxisTaps {
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = out_len as f64 / in_len as f64;
        let stretch = if scale < 1.0 { scale } else { 1.0 };
        let support = 2.0 / stretch;
        let taps = (0..out_len)
            .map(|o| {
                let centre = (o as f64 + 0.5) / scale - 0.5;
                let lo = (centre - support).floor() as isize;
                let hi = (centre + support).ceil() as isize;
                let mut row: Vec<(usize, f64)> = Vec::new();
                for i in lo..=hi {
                    let w = cubic((i as f64 - centre) * stretch);
                    if w == 0.0 {
                        continue;
                    }
                    let src = i.clamp(0, in_len as isize - 1) as usize;
                    match row.iter_mut().find(|(s, _)| *s == src) {
                        Some(t) => t.1 += w,
                        None => row.push((src, w)),
                    }
                }
                let total: f64 = row.iter().map(|t| t.1).sum();
                for t in &mut row {
                    t.1 /= total;
                }
                row
            })
            .collect();
        AxisTaps { taps }
    }
}

/// Resizes every plane by `scale`; output sizes are rounded to the nearest integer.
pub fn resize_bicubic<T: Scalar>(x: &Tensor<T>, scale: Ratio) -> Result<Tensor<T>> {
    if scale.num == 0 || scale.den == 0 {
        return Err(Error::shape("resize_bicubic", "scale must be positive"));
    }
    let s = x.shape();
    resize_bicubic_to(x, scale.apply(s.h), scale.apply(s.w))
}

/// Resizes every plane to exactly `out_h × out_w`.
pub fn resize_bicubic_to<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if out_h == 0 || out_w == 0 || s.h == 0 || s.w == 0 {
        return Err(Error::shape(
            "resize_bicubic",
            format!("degenerate resize {}x{} -> {out_h}x{out_w}", s.h, s.w),
        ));
    }
    if (out_h, out_w) == (s.h, s.w) {
        return Ok(x.clone());
    }
    let rows = AxisTaps::new(s.h, out_h);
    let cols = AxisTaps::new(s.w, out_w);
    let out = Shape::new(s.n, s.c, out_h, out_w);
    let mut data = Vec::with_capacity(out.numel());
    let mut tmp = vec![0.0f64; s.h * out_w];
    for plane in x.data().chunks(s.plane()) {
        for y in 0..s.h {
            let src = &plane[y * s.w..(y + 1) * s.w];
            for (ox, taps) in cols.taps.iter().enumerate() {
                tmp[y * out_w + ox] = taps.iter().map(|&(i, w)| w * src[i].as_f64()).sum();
            }
        }
        for taps in &rows.taps {
            for ox in 0..out_w {
                let v: f64 = taps.iter().map(|&(i, w)| w * tmp[i * out_w + ox]).sum();
                data.push(T::lit(v));
            }
        }
    }
    Ok(Tensor::from_parts(out, data))
}
