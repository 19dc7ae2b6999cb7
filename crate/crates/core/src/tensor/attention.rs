//! Embedded-Gaussian spatial attention and its gradient.
//!
//! For one batch item with `θ, φ, g` viewed as `c × P` matrices (`P = h·w`):
//!
//! ```text
//! A = softmax_rows(θᵀ φ)        (P × P)
//! y = g Aᵀ                       (c × P)
//! ```
//!
//! The forward pass works through blocks of rows of `A`, so inference needs
//! only `ROW_BLOCK · P` scratch. Every element is accumulated in the same
//! order whatever the blocking, so keeping `A` for the backward pass does not
//! change the output.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::{Lanes, Scalar, LANES};
use crate::tensor::conv::gemm;
use crate::tensor::matrix::{softmax_row_in_place, transpose_slice};
use crate::tensor::{Shape, Tensor};

const ROW_BLOCK: usize = 256;

fn check_shapes(a: Shape, b: Shape, c: Shape) -> Result<()> {
    if a != b || a != c {
        return Err(Error::shape(
            "attention",
            format!("theta {a}, phi {b} and g {c} must match"),
        ));
    }
    Ok(())
}

/// Attention output, plus the `(n, 1, P, P)` affinity matrix when `keep` is set.
pub fn attention<T: Scalar>(
    theta: &Tensor<T>,
    phi: &Tensor<T>,
    g: &Tensor<T>,
    keep: bool,
) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let s = theta.shape();
    check_shapes(s, phi.shape(), g.shape())?;
    let (c, p) = (s.c, s.plane());
    let item = c * p;
    let mut out = Vec::with_capacity(s.numel());
    let mut kept = if keep { Vec::with_capacity(s.n * p * p) } else { Vec::new() };
    for n in 0..s.n {
        let range = n * item..(n + 1) * item;
        let tt = transpose_slice(&theta.data()[range.clone()], c, p);
        let gt = transpose_slice(&g.data()[range.clone()], c, p);
        let ph = &phi.data()[range];
        let mut yt = Vec::with_capacity(p * c);
        for r0 in (0..p).step_by(ROW_BLOCK) {
            let rows = ROW_BLOCK.min(p - r0);
            let mut a = gemm(&tt[r0 * c..(r0 + rows) * c], ph, rows, c, p);
            par::for_each_chunk_mut(&mut a, p, |_, row| softmax_row_in_place(row));
            yt.extend(gemm(&a, &gt, rows, p, c));
            if keep {
                kept.extend_from_slice(&a);
            }
        }
        out.extend(transpose_slice(&yt, p, c));
    }
    let y = Tensor::from_parts(s, out);
    y.debug_check_finite("attention");
    let a = keep.then(|| Tensor::from_parts(Shape::new(s.n, 1, p, p), kept));
    Ok((y, a))
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let split = a.len() / LANES * LANES;
    let mut acc = T::Lanes::zero();
    for (x, y) in a[..split].chunks_exact(LANES).zip(b[..split].chunks_exact(LANES)) {
        acc = T::Lanes::load(x).mul_add(T::Lanes::load(y), acc);
    }
    a[split..]
        .iter()
        .zip(&b[split..])
        .fold(acc.sum_lanes(), |s, (&x, &y)| s + x * y)
}

/// Gradients `(dθ, dφ, dg)` of `<dy, y>` given the kept affinity matrix.
pub fn attention_backward<T: Scalar>(
    theta: &Tensor<T>,
    phi: &Tensor<T>,
    g: &Tensor<T>,
    affinity: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let s = theta.shape();
    check_shapes(s, phi.shape(), g.shape())?;
    check_shapes(s, dy.shape(), s)?;
    let (c, p) = (s.c, s.plane());
    if affinity.shape() != Shape::new(s.n, 1, p, p) {
        return Err(Error::shape(
            "attention_backward",
            format!("affinity {} for inputs {s}", affinity.shape()),
        ));
    }
    let item = c * p;
    let (mut dth, mut dph, mut dg) = (
        Vec::with_capacity(s.numel()),
        Vec::with_capacity(s.numel()),
        Vec::with_capacity(s.numel()),
    );
    for n in 0..s.n {
        let range = n * item..(n + 1) * item;
        let a = &affinity.data()[n * p * p..(n + 1) * p * p];
        let (th, ph, gn, dyn_) = (
            &theta.data()[range.clone()],
            &phi.data()[range.clone()],
            &g.data()[range.clone()],
            &dy.data()[range],
        );
        let dyt = transpose_slice(dyn_, c, p);
        // dA = dyᵀ g, then the softmax Jacobian row by row.
        let mut ds = gemm(&dyt, gn, p, c, p);
        par::for_each_chunk_mut(&mut ds, p, |i, row| {
            let arow = &a[i * p..(i + 1) * p];
            let dot = dot(arow, row);
            for (d, &av) in row.iter_mut().zip(arow) {
                *d = av * (*d - dot);
            }
        });
        let pht = transpose_slice(ph, c, p);
        let dtt = gemm(&ds, &pht, p, p, c);
        dth.extend(transpose_slice(&dtt, p, c));
        dph.extend(gemm(th, &ds, c, p, p));
        dg.extend(gemm(dyn_, a, c, p, p));
    }
    Ok((
        Tensor::from_parts(s, dth),
        Tensor::from_parts(s, dph),
        Tensor::from_parts(s, dg),
    ))
}
