//! Batched matrix kernels over the trailing `(h, w)` dimensions.
//!
//! A `(n, c, rows, cols)` tensor is treated as `n·c` independent matrices.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::{Lanes, Scalar, LANES};
use crate::tensor::conv::gemm;
use crate::tensor::{Shape, Tensor};

/// Swaps the two trailing dimensions of every matrix.
pub fn transpose_hw<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let out = Shape::new(s.n, s.c, s.w, s.h);
    let mut data = vec![T::zero(); out.numel()];
    par::for_each_chunk_mut(&mut data, out.plane(), |p, dst| {
        let src = &x.data()[p * s.plane()..(p + 1) * s.plane()];
        for i in 0..s.h {
            for j in 0..s.w {
                dst[j * s.h + i] = src[i * s.w + j];
            }
        }
    });
    Tensor::from_parts(out, data)
}

/// `(n, c, m, k) × (n, c, k, p) -> (n, c, m, p)`.
///
/// Each output element accumulates over `k` in increasing order from zero,
/// so the result does not depend on how the work is split.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.n != sb.n || sa.c != sb.c || sa.w != sb.h {
        return Err(Error::shape(
            "matmul",
            format!("cannot multiply {sa} by {sb}"),
        ));
    }
    let (m, k, p) = (sa.h, sa.w, sb.w);
    let out = Shape::new(sa.n, sa.c, m, p);
    let mut data = Vec::with_capacity(out.numel());
    for batch in 0..sa.n * sa.c {
        let am = &a.data()[batch * m * k..(batch + 1) * m * k];
        let bm = &b.data()[batch * k * p..(batch + 1) * k * p];
        data.extend(gemm(am, bm, m, k, p));
    }
    let out = Tensor::from_parts(out, data);
    out.debug_check_finite("matmul");
    Ok(out)
}

/// Transpose of a row-major `rows × cols` slice.
pub(crate) fn transpose_slice<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut dst = vec![T::zero(); rows * cols];
    for (i, row) in src.chunks(cols.max(1)).enumerate() {
        for (j, &v) in row.iter().enumerate() {
            dst[j * rows + i] = v;
        }
    }
    dst
}

/// Softmax over the last dimension of every matrix row.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let mut data = x.data().to_vec();
    if s.w > 0 {
        par::for_each_chunk_mut(&mut data, s.w, |_, row| softmax_row_in_place(row));
    }
    Tensor::from_parts(s, data)
}

/// Max-subtracted softmax of one row, sixteen lanes at a time.
pub fn softmax_row_in_place<T: Scalar>(row: &mut [T]) {
    let split = row.len() / LANES * LANES;
    let (body, tail) = row.split_at_mut(split);
    let mut vmax = T::Lanes::splat(T::neg_infinity());
    for chunk in body.chunks_exact(LANES) {
        vmax = vmax.max(T::Lanes::load(chunk));
    }
    let max = vmax
        .to_array()
        .iter()
        .chain(tail.iter())
        .fold(T::neg_infinity(), |m, &v| m.max(v));
    let neg = T::Lanes::splat(-max);
    let mut vsum = T::Lanes::zero();
    for chunk in body.chunks_exact_mut(LANES) {
        let e = T::Lanes::load(chunk).add(neg).exp();
        vsum = vsum.add(e);
        e.store(chunk);
    }
    let mut sum = vsum.sum_lanes();
    for v in tail.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    let vinv = T::Lanes::splat(inv);
    for chunk in body.chunks_exact_mut(LANES) {
        T::Lanes::load(chunk).mul(vinv).store(chunk);
    }
    for v in tail.iter_mut() {
        *v = *v * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 1, 5), 0.7);
        assert!(softmax_rows(&x).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
        let y = Tensor::new(Shape::new(1, 1, 1, 2), vec![0.0f64, 3f64.ln()]).unwrap();
        let s = softmax_rows(&y);
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn matmul_against_identity() {
        let a = Tensor::<f32>::from_fn(Shape::new(2, 1, 3, 4), |n, _, i, j| (n * 12 + i * 4 + j) as f32);
        let id = Tensor::from_fn(Shape::new(2, 1, 4, 4), |_, _, i, j| if i == j { 1.0 } else { 0.0 });
        assert_eq!(matmul(&a, &id).unwrap(), a);
        assert!(matmul(&a, &a).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let a = Tensor::<f32>::from_fn(Shape::new(1, 2, 3, 5), |_, c, i, j| (c * 15 + i * 5 + j) as f32);
        let t = transpose_hw(&a);
        assert_eq!(t.shape(), Shape::new(1, 2, 5, 3));
        assert_eq!(t.at(0, 1, 4, 2), a.at(0, 1, 2, 4));
        assert_eq!(transpose_hw(&t), a);
    }
}
