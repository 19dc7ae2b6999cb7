//! Full-reference quality metrics: PSNR and SSIM.
//!
//! Both work in `f64` whatever the input precision. SSIM, and the `_y`
//! variant of PSNR, compare the BT.601 luma of RGB inputs; single-channel
//! inputs are used as they are.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Luma weights of ITU-R BT.601, full range.
pub const BT601: [f64; 3] = [0.299, 0.587, 0.114];

fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} vs {b}")));
    }
    if a.numel() == 0 {
        return Err(Error::shape(op, "empty images"));
    }
    Ok(())
}

/// `10·log10(R²/MSE)` over every element. Identical inputs give
/// `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, range: f64) -> Result<f64> {
    same_shape("psnr", a.shape(), b.shape())?;
    if !(range > 0.0) {
        return Err(Error::shape("psnr", format!("dynamic range must be positive, got {range}")));
    }
    let sq: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let mse = sq / a.numel() as f64;
    Ok(psnr_from_mse(mse, range))
}

pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (range * range / mse).log10()
    }
}

/// PSNR on the luma channel.
pub fn psnr_y<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, range: f64) -> Result<f64> {
    same_shape("psnr", a.shape(), b.shape())?;
    psnr(&luma(a)?, &luma(b)?, range)
}

/// `"inf dB"` for the identical-image sentinel, otherwise four decimals.
pub fn format_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf dB".into()
    } else {
        format!("{v:.4} dB")
    }
}

/// `(n, 3, h, w)` RGB to `(n, 1, h, w)` luma; one channel passes through.
pub fn luma<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<f64>> {
    let s = x.shape();
    match s.c {
        1 => Ok(x.cast()),
        3 => {
            let p = s.plane();
            let mut data = Vec::with_capacity(s.n * p);
            for item in x.data().chunks(3 * p) {
                let (r, rest) = item.split_at(p);
                let (g, b) = rest.split_at(p);
                data.extend((0..p).map(|i| {
                    BT601[0] * r[i].as_f64() + BT601[1] * g[i].as_f64() + BT601[2] * b[i].as_f64()
                }));
            }
            Tensor::new(Shape::new(s.n, 1, s.h, s.w), data)
        }
        c => Err(Error::shape("luma", format!("expected 1 or 3 channels, got {c}"))),
    }
}

/// SSIM constants, exponents and window.
#[derive(Clone, Debug, PartialEq)]
pub struct SsimParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub window: usize,
    pub sigma: f64,
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams::with_range(1.0)
    }
}

impl SsimParams {
    /// Standard settings for dynamic range `range`: `C1 = (0.01R)²`,
    /// `C2 = (0.03R)²`, `C3 = C2/2`, unit exponents, 11×11 Gaussian, σ = 1.5.
    pub fn with_range(range: f64) -> Self {
        let c2 = (0.03 * range).powi(2);
        SsimParams {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            c1: (0.01 * range).powi(2),
            c2,
            c3: c2 / 2.0,
            window: 11,
            sigma: 1.5,
            range,
        }
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let mid = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - mid;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c3 > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        if self.window == 0 || !(self.sigma > 0.0) {
            return Err(Error::Config("SSIM window must be non-empty with positive sigma".into()));
        }
        Ok(())
    }

    /// `l^α · c^β · s^γ` from the window statistics.
    pub fn combine(&self, mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
        let (sx, sy) = (vx.max(0.0).sqrt(), vy.max(0.0).sqrt());
        let l = (2.0 * mx * my + self.c1) / (mx * mx + my * my + self.c1);
        let c = (2.0 * sx * sy + self.c2) / (vx + vy + self.c2);
        let s = (cov + self.c3) / (sx * sy + self.c3);
        pow(l, self.alpha) * pow(c, self.beta) * pow(s, self.gamma)
    }
}

fn pow(v: f64, e: f64) -> f64 {
    if e == 1.0 {
        v
    } else {
        v.signum() * v.abs().powf(e)
    }
}

/// Valid-window correlation of one plane with the separable kernel `k`.
fn filter(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(i, a)| a * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over every window position of every batch item.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, p: &SsimParams) -> Result<f64> {
    same_shape("ssim", a.shape(), b.shape())?;
    p.validate()?;
    let s = a.shape();
    if s.h < p.window || s.w < p.window {
        return Err(Error::shape(
            "ssim",
            format!("{}x{} image is smaller than the {}x{} window", s.h, s.w, p.window, p.window),
        ));
    }
    let (ya, yb) = (luma(a)?, luma(b)?);
    let k = p.kernel();
    let (h, w) = (s.h, s.w);
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in ya.data().chunks(h * w).zip(yb.data().chunks(h * w)) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let (mx, my) = (filter(x, h, w, &k), filter(y, h, w, &k));
        let (ex2, ey2, exy) = (filter(&xx, h, w, &k), filter(&yy, h, w, &k), filter(&xy, h, w, &k));
        for i in 0..mx.len() {
            let vx = ex2[i] - mx[i] * mx[i];
            let vy = ey2[i] - my[i] * my[i];
            let cov = exy[i] - mx[i] * my[i];
            total += p.combine(mx[i], my[i], vx, vy, cov);
        }
        count += mx.len();
    }
    Ok(total / count as f64)
}
