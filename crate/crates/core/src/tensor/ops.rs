use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: T) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { v * slope })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    // Split by sign so exp never overflows.
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn scale<T: Scalar>(x: &Tensor<T>, k: T) -> Tensor<T> {
    x.map(|v| v * k)
}

/// How `b` lines up against `a` in a broadcasting binary op.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    Same,
    /// `b` is `(n or 1, c, 1, 1)`: one value per (item, channel).
    PerChannel { batch: bool },
    /// `b` is `(1, 1, 1, 1)`.
    Scalar,
}

pub(crate) fn broadcast_kind(a: Shape, b: Shape, op: &'static str) -> Result<Broadcast> {
    if a == b {
        return Ok(Broadcast::Same);
    }
    if b == Shape::scalar() {
        return Ok(Broadcast::Scalar);
    }
    if b.h == 1 && b.w == 1 && b.c == a.c && (b.n == a.n || b.n == 1) {
        return Ok(Broadcast::PerChannel { batch: b.n == a.n });
    }
    Err(Error::shape(op, format!("cannot broadcast {b} against {a}")))
}

/// Index into `b` for element `(n, c)` of `a` under a broadcast.
#[inline]
pub(crate) fn broadcast_plane(kind: Broadcast, n: usize, c: usize, channels: usize) -> usize {
    match kind {
        Broadcast::Same => unreachable!(),
        Broadcast::PerChannel { batch: true } => n * channels + c,
        Broadcast::PerChannel { batch: false } => c,
        Broadcast::Scalar => 0,
    }
}

fn broadcast_binary<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let kind = broadcast_kind(a.shape(), b.shape(), op)?;
    if kind == Broadcast::Same {
        return a.zip_map(b, f);
    }
    let s = a.shape();
    let p = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for (idx, plane) in a.data().chunks(p.max(1)).enumerate() {
        let (n, c) = (idx / s.c, idx % s.c);
        let bv = b.data()[broadcast_plane(kind, n, c, s.c)];
        data.extend(plane.iter().map(|&v| f(v, bv)));
    }
    let out = Tensor::from_parts(s, data);
    out.debug_check_finite(op);
    Ok(out)
}

/// Elementwise sum; `b` may broadcast per channel or as a scalar.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary(a, b, "sub", |x, y| x - y)
}

/// Elementwise product; `b` may broadcast per channel (a channel gate) or as a scalar.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_binary(a, b, "mul", |x, y| x * y)
}

/// Concatenates along channels, preserving order.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?
        .shape();
    let mut c = 0;
    for x in xs {
        let s = x.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::shape(
                "concat_channels",
                format!("{s} does not match {first} outside the channel dimension"),
            ));
        }
        c += s.c;
    }
    let shape = Shape::new(first.n, c, first.h, first.w);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..first.n {
        for x in xs {
            let len = x.shape().c * first.plane();
            data.extend_from_slice(&x.data()[n * len..(n + 1) * len]);
        }
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Mean over spatial positions: `(n, c, h, w) -> (n, c, 1, 1)`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let denom = T::lit(s.plane() as f64);
    let data = x
        .data()
        .chunks(s.plane().max(1))
        .map(|p| p.iter().fold(T::zero(), |a, &v| a + v) / denom)
        .collect();
    Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data)
}

/// `(n, c·r², h, w) -> (n, c, h·r, w·r)` with
/// `out[n][c][h·r + a][w·r + b] = in[n][c·r² + a·r + b][h][w]`.
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::shape(
            "pixel_shuffle",
            format!("{} channels are not divisible by r² = {}", s.c, r * r),
        ));
    }
    let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut data = vec![T::zero(); out.numel()];
    par::for_each_chunk_mut(&mut data, out.plane(), |p, dst| {
        let (n, c) = (p / out.c, p % out.c);
        for a in 0..r {
            for b in 0..r {
                let src = x.plane(n, c * r * r + a * r + b);
                for h in 0..s.h {
                    let row = &mut dst[(h * r + a) * out.w..(h * r + a + 1) * out.w];
                    for w in 0..s.w {
                        row[w * r + b] = src[h * s.w + w];
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(out, data))
}

/// Inverse of [`pixel_shuffle`]: `(n, c, h·r, w·r) -> (n, c·r², h, w)`.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::shape(
            "pixel_unshuffle",
            format!("{}x{} is not divisible by {r}", s.h, s.w),
        ));
    }
    let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut data = vec![T::zero(); out.numel()];
    par::for_each_chunk_mut(&mut data, out.plane(), |p, dst| {
        let (n, oc) = (p / out.c, p % out.c);
        let (c, a, b) = (oc / (r * r), (oc / r) % r, oc % r);
        let src = x.plane(n, c);
        for h in 0..out.h {
            for w in 0..out.w {
                dst[h * out.w + w] = src[(h * r + a) * s.w + w * r + b];
            }
        }
    });
    Ok(Tensor::from_parts(out, data))
}
