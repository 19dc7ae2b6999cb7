//! Direct 2-D convolution kernels (forward and the three backward products).
//!
//! Every output element of the forward pass accumulates its products in the
//! serial order `(in_channel, ky, kx)` starting from zero, then adds the bias.
//! Work is split over (batch item, block of output channels), so the thread
//! count never changes a result bit.

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::{Lanes, Scalar, LANES};
use crate::tensor::{Shape, Tensor};

/// Output channels computed together by one inner kernel invocation.
const OUT_BLOCK: usize = 8;

/// A convolution layer description with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2dSpec<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `(out_channels, in_channels, kernel, kernel)`
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv2dSpec<T> {
    pub fn new(
        weight: Tensor<T>,
        bias: Vec<T>,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let ws = weight.shape();
        if ws.h != ws.w {
            return Err(Error::shape("conv2d", format!("non-square kernel {ws}")));
        }
        if bias.len() != ws.n {
            return Err(Error::shape(
                "conv2d",
                format!("{} biases for {} output channels", bias.len(), ws.n),
            ));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d", "stride must be positive"));
        }
        Ok(Conv2dSpec {
            in_channels: ws.c,
            out_channels: ws.n,
            kernel: ws.h,
            stride,
            padding,
            weight,
            bias,
        })
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        output_shape(input, self.weight.shape(), self.stride, self.padding)
    }
}

pub fn conv2d<T: Scalar>(x: &Tensor<T>, spec: &Conv2dSpec<T>) -> Result<Tensor<T>> {
    conv2d_raw(x, &spec.weight, Some(&spec.bias), spec.stride, spec.padding)
}

fn output_shape(input: Shape, weight: Shape, stride: usize, pad: usize) -> Result<Shape> {
    if input.c != weight.c {
        return Err(Error::shape(
            "conv2d",
            format!(
                "input has {} channels but the kernel {} expects {}",
                input.c, weight, weight.c
            ),
        ));
    }
    if weight.h != weight.w || weight.h == 0 {
        return Err(Error::shape("conv2d", format!("bad kernel {weight}")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d", "stride must be positive"));
    }
    let k = weight.h;
    if input.h + 2 * pad < k || input.w + 2 * pad < k {
        return Err(Error::shape(
            "conv2d",
            format!(
                "kernel {k} with padding {pad} does not fit a {}x{} input",
                input.h, input.w
            ),
        ));
    }
    Ok(Shape::new(
        input.n,
        weight.n,
        (input.h + 2 * pad - k) / stride + 1,
        (input.w + 2 * pad - k) / stride + 1,
    ))
}

/// Convolution with an explicit `(out, in, k, k)` weight and optional bias.
pub fn conv2d_raw<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let out_shape = output_shape(x.shape(), weight.shape(), stride, pad)?;
    if let Some(b) = bias {
        if b.len() != out_shape.c {
            return Err(Error::shape(
                "conv2d",
                format!("{} biases for {} output channels", b.len(), out_shape.c),
            ));
        }
    }
    let padded = Padded::new(x.data(), x.shape(), pad, stride, weight.shape().h, out_shape.w);
    let out = forward_kernel(&padded, weight.data(), weight.shape(), bias, stride, out_shape);
    out.debug_check_finite("conv2d");
    Ok(out)
}

/// Zero-padded copy of the input, wide enough that every accumulator lane can
/// read without bounds checks.
struct Padded<T> {
    data: Vec<T>,
    c: usize,
    h: usize,
    w: usize,
}

impl<T: Scalar> Padded<T> {
    fn new(x: &[T], s: Shape, pad: usize, stride: usize, k: usize, out_w: usize) -> Self {
        let lanes_w = out_w.div_ceil(LANES) * LANES;
        let w = ((lanes_w - 1) * stride + k).max(s.w + 2 * pad);
        let h = s.h + 2 * pad;
        let mut data = vec![T::zero(); s.n * s.c * h * w];
        for (p, plane) in x.chunks(s.plane().max(1)).enumerate() {
            let dst = &mut data[p * h * w..(p + 1) * h * w];
            for (y, row) in plane.chunks(s.w).enumerate() {
                let start = (y + pad) * w + pad;
                dst[start..start + s.w].copy_from_slice(row);
            }
        }
        Padded {
            data,
            c: s.c,
            h,
            w,
        }
    }
}

/// Packs `(o, taps)` weights as `[block][tap][OUT_BLOCK]` so the inner loop
/// reads one contiguous group of per-output-channel values.
fn pack_weights<T: Scalar>(wd: &[T], o: usize, taps: usize) -> Vec<T> {
    let blocks = o.div_ceil(OUT_BLOCK);
    let mut packed = vec![T::zero(); blocks * taps * OUT_BLOCK];
    for oc in 0..o {
        let (b, q) = (oc / OUT_BLOCK, oc % OUT_BLOCK);
        for t in 0..taps {
            packed[(b * taps + t) * OUT_BLOCK + q] = wd[oc * taps + t];
        }
    }
    packed
}

fn forward_kernel<T: Scalar>(
    xp: &Padded<T>,
    wd: &[T],
    wshape: Shape,
    bias: Option<&[T]>,
    stride: usize,
    out_shape: Shape,
) -> Tensor<T> {
    let k = wshape.h;
    let c = xp.c;
    let o = out_shape.c;
    let taps = c * k * k;
    let packed = pack_weights(wd, o, taps);
    let plane = out_shape.plane();
    let mut out = vec![T::zero(); out_shape.numel()];
    if plane == 0 || o == 0 {
        return Tensor::from_parts(out_shape, out);
    }
    let in_plane = xp.h * xp.w;
    // One task per (batch item, output block) when blocks tile the channels
    // evenly, otherwise one task per batch item.
    let planes_per_task = if o.is_multiple_of(OUT_BLOCK) { OUT_BLOCK } else { o };
    let tasks_per_item = o / planes_per_task;
    par::for_each_chunk_mut(&mut out, planes_per_task * plane, |task, chunk| {
        let ni = task / tasks_per_item;
        let first_block = (task % tasks_per_item) * planes_per_task / OUT_BLOCK;
        let xn = &xp.data[ni * c * in_plane..(ni + 1) * c * in_plane];
        for (j, sub) in chunk.chunks_mut(OUT_BLOCK * plane).enumerate() {
            let b = first_block + j;
            let wblk = &packed[b * taps * OUT_BLOCK..(b + 1) * taps * OUT_BLOCK];
            let bias_blk = bias.map(|bs| &bs[b * OUT_BLOCK..(b * OUT_BLOCK + OUT_BLOCK).min(o)]);
            match stride {
                1 => block_rows::<T, 1>(xn, xp, wblk, bias_blk, k, 1, out_shape, sub),
                2 => block_rows::<T, 2>(xn, xp, wblk, bias_blk, k, 2, out_shape, sub),
                s => block_rows::<T, 0>(xn, xp, wblk, bias_blk, k, s, out_shape, sub),
            }
        }
    });
    Tensor::from_parts(out_shape, out)
}

/// Computes one block of up to `OUT_BLOCK` output planes for one batch item.
/// `S` is the stride when known at compile time, or 0 for a runtime stride.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn block_rows<T: Scalar, const S: usize>(
    xn: &[T],
    xp: &Padded<T>,
    wblk: &[T],
    bias: Option<&[T]>,
    k: usize,
    stride: usize,
    out_shape: Shape,
    chunk: &mut [T],
) {
    let stride = if S == 0 { stride } else { S };
    let plane = out_shape.plane();
    let nout = chunk.len() / plane;
    let (ho, wo) = (out_shape.h, out_shape.w);
    let groups = wo.div_ceil(LANES);
    let dims = [xp.c, xp.h, xp.w];
    for y in 0..ho {
        let mut g = 0;
        while g < groups {
            // Two lane groups per pass halve the weight broadcasts per FMA.
            let (acc, n) = if groups - g >= 2 {
                let acc = micro::<T, S, 2>(xn, dims, wblk, k, stride, y, g * LANES);
                (acc, 2)
            } else {
                let [a] = micro::<T, S, 1>(xn, dims, wblk, k, stride, y, g * LANES);
                ([a, [T::Lanes::zero(); OUT_BLOCK]], 1)
            };
            for (j, acc_g) in acc.iter().enumerate().take(n) {
                let x0 = (g + j) * LANES;
                let valid = LANES.min(wo - x0);
                for (q, &a) in acc_g.iter().enumerate().take(nout) {
                    let v = match bias {
                        Some(bs) => a.add(T::Lanes::splat(bs[q])),
                        None => a,
                    };
                    let start = q * plane + y * wo + x0;
                    if valid == LANES {
                        v.store(&mut chunk[start..start + LANES]);
                    } else {
                        chunk[start..start + valid].copy_from_slice(&v.to_array()[..valid]);
                    }
                }
            }
            g += n;
        }
    }
}

/// `G` lane groups × `OUT_BLOCK` output channels of one output row, starting
/// at column `x0`. `xn` holds `dims = [channels, rows, row width]` of input.
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn micro<T: Scalar, const S: usize, const G: usize>(
    xn: &[T],
    dims: [usize; 3],
    wblk: &[T],
    k: usize,
    stride: usize,
    y: usize,
    x0: usize,
) -> [[T::Lanes; OUT_BLOCK]; G] {
    let stride = if S == 0 { stride } else { S };
    let [c, hp, wp] = dims;
    let mut acc = [[T::Lanes::zero(); OUT_BLOCK]; G];
    for i in 0..c {
        for ky in 0..k {
            let row_start = (i * hp + y * stride + ky) * wp;
            let row = &xn[row_start..row_start + wp];
            for kx in 0..k {
                let wv: &[T; OUT_BLOCK] = wblk[((i * k + ky) * k + kx) * OUT_BLOCK..][..OUT_BLOCK]
                    .try_into()
                    .unwrap();
                let mut src = [T::Lanes::zero(); G];
                for (j, s) in src.iter_mut().enumerate() {
                    let base = x0 + j * LANES;
                    *s = if stride == 1 {
                        T::Lanes::load(&row[base + kx..base + kx + LANES])
                    } else {
                        let mut g = [T::zero(); LANES];
                        for (l, v) in g.iter_mut().enumerate() {
                            *v = row[(base + l) * stride + kx];
                        }
                        T::Lanes::load(&g)
                    };
                }
                for q in 0..OUT_BLOCK {
                    let w = T::Lanes::splat(wv[q]);
                    for j in 0..G {
                        acc[j][q] = w.mul_add(src[j], acc[j][q]);
                    }
                }
            }
        }
    }
    acc
}

/// Row-major `(m × k) · (k × p)`, run as a 1×1 convolution with `a` as the
/// kernel. Each output accumulates over `k` in increasing order from zero.
pub(crate) fn gemm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, p: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * p);
    let mut out = vec![T::zero(); m * p];
    if m == 0 || p == 0 {
        return out;
    }
    // Rows of `b` must hold whole lane groups.
    let groups = p.div_ceil(LANES);
    let padded;
    let (bd, wp) = if p.is_multiple_of(LANES) {
        (b, p)
    } else {
        padded = Padded::new(b, Shape::new(1, k, 1, p), 0, 1, 1, p);
        (&padded.data[..], padded.w)
    };
    let packed = pack_weights(a, m, k);
    let blocks = m.div_ceil(OUT_BLOCK);
    // One task per strip of two lane groups; the strip of `b` stays in cache
    // while every block of rows of `a` sweeps over it.
    let strips = groups.div_ceil(2);
    let parts = par::map_indexed(strips, |s| {
        let g0 = 2 * s;
        let n = (groups - g0).min(2);
        let mut part = vec![T::zero(); m * n * LANES];
        for blk in 0..blocks {
            let wblk = &packed[blk * k * OUT_BLOCK..(blk + 1) * k * OUT_BLOCK];
            let dims = [k, 1, wp];
            let acc = if n == 2 {
                micro::<T, 1, 2>(bd, dims, wblk, 1, 1, 0, g0 * LANES)
            } else {
                let [a] = micro::<T, 1, 1>(bd, dims, wblk, 1, 1, 0, g0 * LANES);
                [a, [T::Lanes::zero(); OUT_BLOCK]]
            };
            for q in 0..OUT_BLOCK.min(m - blk * OUT_BLOCK) {
                let row = &mut part[(blk * OUT_BLOCK + q) * n * LANES..][..n * LANES];
                for (j, chunk) in row.chunks_exact_mut(LANES).enumerate() {
                    acc[j][q].store(chunk);
                }
            }
        }
        part
    });
    for (s, part) in parts.iter().enumerate() {
        let x0 = 2 * s * LANES;
        let width = part.len() / m;
        let valid = width.min(p - x0);
        for (row, src) in part.chunks_exact(width).enumerate() {
            out[row * p + x0..row * p + x0 + valid].copy_from_slice(&src[..valid]);
        }
    }
    out
}

/// Gradient of the convolution output with respect to its input.
///
/// Computed as a stride-1 convolution of the zero-dilated, re-padded output
/// gradient with the spatially flipped, channel-transposed kernel.
pub fn conv2d_backward_input<T: Scalar>(
    grad_out: &Tensor<T>,
    weight: &Tensor<T>,
    input_shape: Shape,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let expected = output_shape(input_shape, weight.shape(), stride, pad)?;
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward_input",
            format!("gradient {} but forward output {}", grad_out.shape(), expected),
        ));
    }
    let ws = weight.shape();
    let k = ws.h;
    let (o, c) = (ws.n, ws.c);
    // Transposed and flipped kernel: (in, out, k, k).
    let mut wt = vec![T::zero(); ws.numel()];
    let wd = weight.data();
    for oc in 0..o {
        for ic in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    wt[((ic * o + oc) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        wd[((oc * c + ic) * k + ky) * k + kx];
                }
            }
        }
    }
    let wt = Tensor::from_parts(Shape::new(c, o, k, k), wt);

    // E[t] = G[(t - q) / s] where q = k - 1 - pad (possibly negative).
    let go = grad_out.shape();
    let eh = input_shape.h + k - 1;
    let ew = input_shape.w + k - 1;
    let q = k as isize - 1 - pad as isize;
    let mut e = vec![T::zero(); go.n * o * eh * ew];
    let map = |t: usize, len: usize| -> Option<usize> {
        let d = t as isize - q;
        if d < 0 || !(d as usize).is_multiple_of(stride) {
            return None;
        }
        let idx = d as usize / stride;
        (idx < len).then_some(idx)
    };
    let rows: Vec<Option<usize>> = (0..eh).map(|t| map(t, go.h)).collect();
    let cols: Vec<Option<usize>> = (0..ew).map(|t| map(t, go.w)).collect();
    for (p, src) in grad_out.data().chunks(go.plane()).enumerate() {
        let dst = &mut e[p * eh * ew..(p + 1) * eh * ew];
        for (ty, ry) in rows.iter().enumerate() {
            let Some(gy) = *ry else { continue };
            for (tx, cx) in cols.iter().enumerate() {
                if let Some(gx) = *cx {
                    dst[ty * ew + tx] = src[gy * go.w + gx];
                }
            }
        }
    }
    let e = Tensor::from_parts(Shape::new(go.n, o, eh, ew), e);
    conv2d_raw(&e, &wt, None, 1, 0)
}

/// Gradient of the convolution output with respect to its kernel.
pub fn conv2d_backward_weight<T: Scalar>(
    x: &Tensor<T>,
    grad_out: &Tensor<T>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let xs = x.shape();
    let go = grad_out.shape();
    let wshape = Shape::new(go.c, xs.c, kernel, kernel);
    let expected = output_shape(xs, wshape, stride, pad)?;
    if go != expected {
        return Err(Error::shape(
            "conv2d_backward_weight",
            format!("gradient {go} but forward output {expected}"),
        ));
    }
    let xp = Padded::new(x.data(), xs, pad, stride, kernel, go.w);
    let (hp, wp) = (xp.h, xp.w);
    let k = kernel;
    let c = xs.c;
    let o = go.c;
    // Output gradient rows zero-padded to whole lane groups.
    let gw_len = go.w.div_ceil(LANES) * LANES;
    let mut gp = vec![T::zero(); go.n * o * go.h * gw_len];
    for (r, src) in grad_out.data().chunks(go.w.max(1)).enumerate() {
        gp[r * gw_len..r * gw_len + src.len()].copy_from_slice(src);
    }
    // For strided convolutions, input rows resampled per kx:
    // cols[n][ic][row][kx][x] = xp[n][ic][row][x * stride + kx].
    let cols = (stride != 1).then(|| {
        let mut cols = vec![T::zero(); go.n * c * hp * k * gw_len];
        for (r, xrow) in xp.data.chunks(wp).enumerate() {
            for kx in 0..k {
                let dst = &mut cols[(r * k + kx) * gw_len..][..gw_len];
                for (xo, d) in dst.iter_mut().enumerate() {
                    *d = xrow[xo * stride + kx];
                }
            }
        }
        cols
    });
    let mut gw = vec![T::zero(); wshape.numel()];
    let per_out = c * k * k;
    if per_out == 0 || o == 0 {
        return Ok(Tensor::from_parts(wshape, gw));
    }
    let geo = BwGeometry {
        gp: &gp,
        xp: &xp,
        cols: cols.as_deref(),
        n: go.n,
        o,
        ho: go.h,
        gw_len,
        k,
        stride,
    };
    par::for_each_chunk_mut(&mut gw, OUT_BLOCK * per_out, |blk, dst| {
        let oc0 = blk * OUT_BLOCK;
        if dst.len() == OUT_BLOCK * per_out {
            weight_tile::<T, OUT_BLOCK>(&geo, oc0, dst);
        } else {
            for (q, d) in dst.chunks_mut(per_out).enumerate() {
                weight_tile::<T, 1>(&geo, oc0 + q, d);
            }
        }
    });
    let gw = Tensor::from_parts(wshape, gw);
    gw.debug_check_finite("conv2d_backward_weight");
    Ok(gw)
}

struct BwGeometry<'a, T> {
    /// Output gradient, rows padded to `gw_len`.
    gp: &'a [T],
    xp: &'a Padded<T>,
    /// Strided input columns, see `conv2d_backward_weight`.
    cols: Option<&'a [T]>,
    n: usize,
    o: usize,
    ho: usize,
    gw_len: usize,
    k: usize,
    stride: usize,
}

/// Kernel gradient of output channels `oc0..oc0 + Q` into `dst`.
///
/// Rows of one item are taken `ROW_TILE` at a time so the gradient rows of
/// the block stay in L1 while every tap sweeps over them. Per-tap lane
/// vectors are accumulated tile by tile and reduced once at the end.
fn weight_tile<T: Scalar, const Q: usize>(geo: &BwGeometry<'_, T>, oc0: usize, dst: &mut [T]) {
    const ROW_TILE: usize = 8;
    let BwGeometry { gp, xp, cols, n, o, ho, gw_len, k, stride } = *geo;
    let (c, hp, wp) = (xp.c, xp.h, xp.w);
    let per_out = c * k * k;
    let mut lanes = vec![[T::Lanes::zero(); Q]; per_out];
    for ni in 0..n {
        for y0 in (0..ho).step_by(ROW_TILE) {
            let y1 = (y0 + ROW_TILE).min(ho);
            for ic in 0..c {
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = [T::Lanes::zero(); Q];
                        for y in y0..y1 {
                            let r = (ni * c + ic) * hp + y * stride + ky;
                            let xrow = match cols {
                                None => &xp.data[r * wp + kx..][..gw_len],
                                Some(cols) => &cols[(r * k + kx) * gw_len..][..gw_len],
                            };
                            let gbase = ((ni * o + oc0) * ho + y) * gw_len;
                            for x0 in (0..gw_len).step_by(LANES) {
                                let xv = T::Lanes::load(&xrow[x0..]);
                                for (q, a) in acc.iter_mut().enumerate() {
                                    let g = &gp[gbase + q * ho * gw_len + x0..];
                                    *a = T::Lanes::load(g).mul_add(xv, *a);
                                }
                            }
                        }
                        let tap = &mut lanes[(ic * k + ky) * k + kx];
                        for (t, a) in tap.iter_mut().zip(acc) {
                            *t = t.add(a);
                        }
                    }
                }
            }
        }
    }
    for (tap, l) in lanes.iter().enumerate() {
        for (q, a) in l.iter().enumerate() {
            dst[q * per_out + tap] = a.sum_lanes();
        }
    }
}

/// Gradient with respect to the bias: per-channel sum of the output gradient.
pub fn conv2d_backward_bias<T: Scalar>(grad_out: &Tensor<T>) -> Vec<T> {
    let s = grad_out.shape();
    (0..s.c)
        .map(|c| {
            (0..s.n).fold(T::zero(), |acc, n| {
                grad_out
                    .plane(n, c)
                    .iter()
                    .fold(acc, |a, &v| a + v)
            })
        })
        .collect()
}
