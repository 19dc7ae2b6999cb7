//! Procedural test images: a smooth colour gradient overlaid with
//! flat-coloured rectangles, discs and stripe patches plus faint plane
//! waves. Edges are sharp; stripe periods stay above the ×4 LR Nyquist
//! limit, so the detail is recoverable in principle.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

use super::sub_rng;

enum Shape2 {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Disc { cy: f64, cx: f64, r: f64 },
    Stripes { cy: f64, cx: f64, r: f64, freq: f64, angle: f64 },
}

impl Shape2 {
    /// Opacity at pixel centre `(y, x)`.
    fn cover(&self, y: f64, x: f64) -> f64 {
        match *self {
            Shape2::Rect { y0, x0, y1, x1 } => (y >= y0 && y < y1 && x >= x0 && x < x1) as u8 as f64,
            Shape2::Disc { cy, cx, r } => ((y - cy).powi(2) + (x - cx).powi(2) <= r * r) as u8 as f64,
            Shape2::Stripes { cy, cx, r, freq, angle } => {
                let inside = (y - cy).abs() <= r && (x - cx).abs() <= r;
                let t = (y - cy) * angle.sin() + (x - cx) * angle.cos();
                (inside && (t * freq).sin() > 0.0) as u8 as f64
            }
        }
    }
}

fn colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// A `(1, 3, h, w)` image in `[0, 1]`, fixed by `(seed, index)`.
pub fn synthetic_image(h: usize, w: usize, seed: u64, index: u64) -> Tensor<f32> {
    let mut rng = sub_rng(seed ^ 0x5EED_1A6E, index);
    let (c0, c1) = (colour(&mut rng), colour(&mut rng));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (hf, wf) = (h as f64, w as f64);
    let span = hf.max(wf);
    let count = 6 + (h * w / 900).min(40);
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let cy = rng.random_range(0.0..hf);
        let cx = rng.random_range(0.0..wf);
        let r = rng.random_range(0.04..0.25) * span;
        let shape = match rng.random_range(0..3) {
            0 => Shape2::Rect {
                y0: cy - r,
                x0: cx - r * rng.random_range(0.3..1.5),
                y1: cy + r * rng.random_range(0.3..1.5),
                x1: cx + r,
            },
            1 => Shape2::Disc { cy, cx, r },
            _ => Shape2::Stripes {
                cy,
                cx,
                r,
                freq: rng.random_range(0.15..0.5),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            },
        };
        shapes.push((shape, colour(&mut rng)));
    }
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.02..0.3),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(0.0..0.05),
            )
        })
        .collect();
    let shape = Shape::new(1, 3, h, w);
    let mut img = vec![0.0f64; shape.numel()];
    let p = h * w;
    for y in 0..h {
        for x in 0..w {
            let (yc, xc) = (y as f64 + 0.5, x as f64 + 0.5);
            let t = ((yc * angle.sin() + xc * angle.cos()) / span * 0.5 + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for (s, col) in &shapes {
                let a = s.cover(yc, xc);
                if a > 0.0 {
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - a) + col[c] * a;
                    }
                }
            }
            let g: f64 = waves
                .iter()
                .map(|&(f, dir, phase, amp)| amp * ((yc * dir.sin() + xc * dir.cos()) * f + phase).sin())
                .sum();
            for c in 0..3 {
                img[c * p + y * w + x] = (px[c] + g).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(shape, img.into_iter().map(|v| v as f32).collect()).expect("sized above")
}
