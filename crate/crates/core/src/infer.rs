//! Whole-image inference: overlapping tiles and the eight-way self-ensemble.
//!
//! Tiles are `tile × tile` LR crops placed every `tile − overlap` pixels,
//! with the last tile on each axis shifted inward so it ends at the image
//! border. In the HR output every tile is weighted by a linear ramp across
//! the overlap bands (no ramp at the image border), and the weights are
//! normalized so they sum to one at every pixel. Blending is done in `f64`,
//! so wherever all tiles agree the blended value is exactly that value.

use crate::error::{Error, Result};
use crate::model::FanModel;
use crate::tensor::{Dihedral, Shape, Tensor};

pub const DEFAULT_TILE: usize = 196;
pub const DEFAULT_OVERLAP: usize = 8;

/// A rectangle `[y, y + h) × [x, x + w)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

/// One tile: where it is read in the LR image and pasted in the HR canvas.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tile {
    pub lr: Rect,
    pub hr: Rect,
}

/// Tile layout for an `h × w` LR image; depends on nothing else.
#[derive(Clone, Debug, PartialEq)]
pub struct TilingPlan {
    pub tile: usize,
    pub overlap: usize,
    pub scale: usize,
    pub h: usize,
    pub w: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    /// Normalized blend weights per tile along each HR axis.
    row_weights: Vec<Vec<f64>>,
    col_weights: Vec<Vec<f64>>,
}

/// Tile starts along one axis.
fn starts(len: usize, tile: usize, overlap: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let stride = tile - overlap;
    let mut s: Vec<usize> = (0..).map(|i| i * stride).take_while(|&p| p + tile < len).collect();
    s.push(len - tile);
    s.dedup();
    s
}

/// Per-tile weights over `[start·scale, (start + size)·scale)`, normalized
/// across tiles.
fn axis_weights(len: usize, starts: &[usize], size: usize, overlap: usize, scale: usize) -> Vec<Vec<f64>> {
    let ramp = (overlap * scale) as f64;
    let (hr_len, hr_size) = (len * scale, size * scale);
    let raw: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| {
            let (lo, hi) = (s * scale, s * scale + hr_size);
            (lo..hi)
                .map(|p| {
                    let mut v: f64 = 1.0;
                    if ramp > 0.0 && lo > 0 {
                        v = v.min(((p - lo) as f64 + 0.5) / ramp);
                    }
                    if ramp > 0.0 && hi < hr_len {
                        v = v.min(((hi - p) as f64 - 0.5) / ramp);
                    }
                    v
                })
                .collect()
        })
        .collect();
    let mut total = vec![0.0; hr_len];
    for (&s, w) in starts.iter().zip(&raw) {
        for (i, v) in w.iter().enumerate() {
            total[s * scale + i] += v;
        }
    }
    starts
        .iter()
        .zip(raw)
        .map(|(&s, w)| w.iter().enumerate().map(|(i, v)| v / total[s * scale + i]).collect())
        .collect()
}

impl TilingPlan {
    pub fn new(h: usize, w: usize, tile: usize, overlap: usize) -> Result<Self> {
        Self::with_scale(h, w, tile, overlap, 4)
    }

    pub fn with_scale(h: usize, w: usize, tile: usize, overlap: usize, scale: usize) -> Result<Self> {
        if tile == 0 || !tile.is_multiple_of(4) {
            return Err(Error::Config(format!("tile must be a positive multiple of 4, got {tile}")));
        }
        if overlap >= tile {
            return Err(Error::Config(format!("overlap {overlap} must be smaller than tile {tile}")));
        }
        if h == 0 || w == 0 || scale == 0 {
            return Err(Error::Config(format!("cannot tile a {h}x{w} image at scale {scale}")));
        }
        let (rows, cols) = (starts(h, tile, overlap), starts(w, tile, overlap));
        let (th, tw) = (tile.min(h), tile.min(w));
        Ok(TilingPlan {
            tile,
            overlap,
            scale,
            h,
            w,
            row_weights: axis_weights(h, &rows, th, overlap, scale),
            col_weights: axis_weights(w, &cols, tw, overlap, scale),
            rows,
            cols,
        })
    }

    pub fn tiles(&self) -> Vec<Tile> {
        let (th, tw) = (self.tile.min(self.h), self.tile.min(self.w));
        let s = self.scale;
        let mut out = Vec::with_capacity(self.rows.len() * self.cols.len());
        for &y in &self.rows {
            for &x in &self.cols {
                out.push(Tile {
                    lr: Rect { y, x, h: th, w: tw },
                    hr: Rect {
                        y: y * s,
                        x: x * s,
                        h: th * s,
                        w: tw * s,
                    },
                });
            }
        }
        out
    }

    /// Blend weight of tile `(row, col)` at HR offset `(dy, dx)` inside it.
    pub fn weight(&self, row: usize, col: usize, dy: usize, dx: usize) -> f64 {
        self.row_weights[row][dy] * self.col_weights[col][dx]
    }

    /// The sum of all tile weights at every HR pixel.
    pub fn weight_sums(&self) -> Vec<f64> {
        let (hh, hw) = (self.h * self.scale, self.w * self.scale);
        let mut sum = vec![0.0; hh * hw];
        for (ri, &y) in self.rows.iter().enumerate() {
            for (ci, &x) in self.cols.iter().enumerate() {
                let (oy, ox) = (y * self.scale, x * self.scale);
                for dy in 0..self.row_weights[ri].len() {
                    for dx in 0..self.col_weights[ci].len() {
                        sum[(oy + dy) * hw + ox + dx] += self.weight(ri, ci, dy, dx);
                    }
                }
            }
        }
        sum
    }
}

/// Super-resolves `x` tile by tile with `f` and blends the results.
///
/// `x` is `(n, 3, h, w)` and `f` must map a `(n, 3, th, tw)` tile to
/// `(n, 3, scale·th, scale·tw)`.
pub fn infer_tiled<F>(x: &Tensor<f32>, plan: &TilingPlan, f: F) -> Result<Tensor<f32>>
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    let s = x.shape();
    if s.c != 3 {
        return Err(Error::shape("infer", format!("expected an RGB image, got {} channels", s.c)));
    }
    if (s.h, s.w) != (plan.h, plan.w) {
        return Err(Error::shape(
            "infer",
            format!("plan is for {}x{}, image is {}x{}", plan.h, plan.w, s.h, s.w),
        ));
    }
    let k = plan.scale;
    let out = Shape::new(s.n, s.c, s.h * k, s.w * k);
    if plan.rows.len() == 1 && plan.cols.len() == 1 {
        let y = f(x)?;
        check_output(&y, out)?;
        return Ok(y);
    }
    let mut acc = vec![0.0f64; out.numel()];
    for (ri, &ty) in plan.rows.iter().enumerate() {
        for (ci, &tx) in plan.cols.iter().enumerate() {
            let (th, tw) = (plan.row_weights[ri].len() / k, plan.col_weights[ci].len() / k);
            let y = f(&x.crop(ty, tx, th, tw)?)?;
            let ts = Shape::new(s.n, s.c, th * k, tw * k);
            check_output(&y, ts)?;
            let (oy, ox) = (ty * k, tx * k);
            for (p, plane) in y.data().chunks(ts.plane()).enumerate() {
                let base = p * out.plane();
                for dy in 0..ts.h {
                    let wy = plan.row_weights[ri][dy];
                    let row = &plane[dy * ts.w..(dy + 1) * ts.w];
                    let dst = &mut acc[base + (oy + dy) * out.w + ox..][..ts.w];
                    for (dx, (a, &v)) in dst.iter_mut().zip(row).enumerate() {
                        *a += wy * plan.col_weights[ci][dx] * v as f64;
                    }
                }
            }
        }
    }
    Tensor::new(out, acc.into_iter().map(|v| v as f32).collect())
}

fn check_output(y: &Tensor<f32>, want: Shape) -> Result<()> {
    if y.shape() != want {
        return Err(Error::shape("infer", format!("model produced {}, expected {want}", y.shape())));
    }
    Ok(())
}

/// Mean over the eight dihedral transforms `T` of `T⁻¹(infer_tiled(T x))`.
pub fn self_ensemble<F>(x: &Tensor<f32>, tile: usize, overlap: usize, f: F) -> Result<Tensor<f32>>
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>>,
{
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = x.shape();
    for t in Dihedral::all() {
        let tx = t.apply(x);
        let plan = TilingPlan::new(tx.shape().h, tx.shape().w, tile, overlap)?;
        let y = t.invert(&infer_tiled(&tx, &plan, &f)?);
        shape = y.shape();
        match acc.as_mut() {
            None => acc = Some(y.data().iter().map(|&v| v as f64).collect()),
            Some(a) => a.iter_mut().zip(y.data()).for_each(|(a, &v)| *a += v as f64),
        }
    }
    let acc = acc.expect("eight transforms");
    Tensor::new(shape, acc.into_iter().map(|v| (v / 8.0) as f32).collect())
}

/// Runs `model` on an image of any size, padding the bottom and right edges
/// by replication up to the model's input multiple and cropping the result.
pub fn upscale(model: &FanModel<f32>, x: &Tensor<f32>) -> Result<Tensor<f32>> {
    let m = model.config().input_multiple();
    let s = x.shape();
    let (ph, pw) = (s.h.div_ceil(m) * m, s.w.div_ceil(m) * m);
    if (ph, pw) == (s.h, s.w) {
        return model.forward(x);
    }
    let padded = Tensor::from_fn(Shape::new(s.n, s.c, ph, pw), |n, c, y, xx| {
        x.at(n, c, y.min(s.h - 1), xx.min(s.w - 1))
    });
    let k = model.config().scale;
    model.forward(&padded)?.crop(0, 0, s.h * k, s.w * k)
}

/// Nearest-neighbour ×`k` enlargement; exactly tile-local and equivariant.
pub fn nearest_upsample(x: &Tensor<f32>, k: usize) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(Shape::new(s.n, s.c, s.h * k, s.w * k), |n, c, y, xx| x.at(n, c, y / k, xx / k))
}
