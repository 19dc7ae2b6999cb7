//! Training and evaluation pairs.
//!
//! A clean image `I` yields a pair through two simulated cameras:
//!
//! ```text
//! HR = clamp(I ∗ k_HR + n_HR)
//! LR = clamp((I ∗ k_LR)↓s + n_LR)
//! ```
//!
//! with Gaussian blur kernels, bicubic decimation by `s` and zero-mean
//! Gaussian noise. Every image draws its noise from its own generator keyed by
//! `(seed, index)`, so pairs can be built in any order or on any number of
//! threads.

mod io;
mod kernel;
mod synth;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Workers;
use crate::tensor::{resize_bicubic, Dihedral, Ratio, Shape, Tensor};

pub use io::{from_rgb8, list_pngs, load_png, pair_names, quantize, save_png, to_rgb8, Unpaired};
pub use kernel::BlurKernel;
pub use synth::synthetic_image;

/// Generator for item `index` of a run seeded with `seed`.
pub fn sub_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Blur, decimation and noise of the two simulated cameras.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub k_hr: BlurKernel,
    pub k_lr: BlurKernel,
    pub scale: usize,
    pub noise_hr: f64,
    pub noise_lr: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig::gaussian(0.0, 1.0, 4, 0.0, 0.01, 0).expect("valid defaults")
    }
}

impl DegradationConfig {
    pub fn gaussian(
        sigma_hr: f64,
        sigma_lr: f64,
        scale: usize,
        noise_hr: f64,
        noise_lr: f64,
        seed: u64,
    ) -> Result<Self> {
        let cfg = DegradationConfig {
            k_hr: BlurKernel::gaussian(sigma_hr)?,
            k_lr: BlurKernel::gaussian(sigma_lr)?,
            scale,
            noise_hr,
            noise_lr,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// No blur, no noise: HR is the clean image and LR its bicubic reduction.
    pub fn clean(scale: usize) -> Self {
        DegradationConfig {
            k_hr: BlurKernel::delta(),
            k_lr: BlurKernel::delta(),
            scale,
            noise_hr: 0.0,
            noise_lr: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("downsample factor must be >= 1".into()));
        }
        for (name, v) in [("noise_hr", self.noise_hr), ("noise_lr", self.noise_lr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// An aligned LR/HR pair; `hr` is exactly `scale ×` the size of `lr`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
    pub id: String,
}

impl PairedSample {
    /// The integer size ratio between `hr` and `lr`, if there is one.
    pub fn ratio(&self) -> Option<usize> {
        let (l, h) = (self.lr.shape(), self.hr.shape());
        if l.h == 0 || l.w == 0 || h.h % l.h != 0 {
            return None;
        }
        let r = h.h / l.h;
        (h.w == r * l.w && l.n == h.n && l.c == h.c).then_some(r)
    }
}

/// A degraded pair and how many values were clamped into `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Degraded {
    pub sample: PairedSample,
    pub clamped_hr: usize,
    pub clamped_lr: usize,
}

/// Zero-mean Gaussian noise field.
pub fn gaussian_noise(shape: Shape, std: f64, rng: &mut impl Rng) -> Tensor<f64> {
    if std == 0.0 {
        return Tensor::zeros(shape);
    }
    let normal = Normal::new(0.0, std).expect("std validated as finite and positive");
    let data = (0..shape.numel()).map(|_| normal.sample(rng)).collect();
    Tensor::new(shape, data).expect("sized above")
}

fn add_noise_and_clamp(x: Tensor<f64>, std: f64, rng: &mut ChaCha8Rng) -> (Tensor<f32>, usize) {
    let noise = gaussian_noise(x.shape(), std, rng);
    let mut clamped = 0;
    let data = x
        .data()
        .iter()
        .zip(noise.data())
        .map(|(&v, &n)| {
            let y = v + n;
            if !(0.0..=1.0).contains(&y) {
                clamped += 1;
            }
            y.clamp(0.0, 1.0) as f32
        })
        .collect();
    (Tensor::new(x.shape(), data).expect("same shape"), clamped)
}

/// Degrades image `index` of a run; `image` must be `(1, 3, h, w)` with
/// sides divisible by `cfg.scale`.
pub fn degrade_pair(image: &Tensor<f32>, cfg: &DegradationConfig, index: u64) -> Result<Degraded> {
    cfg.validate()?;
    let s = image.shape();
    if !s.h.is_multiple_of(cfg.scale) || !s.w.is_multiple_of(cfg.scale) || s.h == 0 || s.w == 0 {
        return Err(Error::shape(
            "degrade_pair",
            format!("{}x{} image is not divisible by scale {}", s.h, s.w, cfg.scale),
        ));
    }
    let mut rng = sub_rng(cfg.seed, index);
    let clean: Tensor<f64> = image.cast();
    let (hr, clamped_hr) = add_noise_and_clamp(cfg.k_hr.apply(&clean), cfg.noise_hr, &mut rng);
    let low = resize_bicubic(&cfg.k_lr.apply(&clean), Ratio::down(cfg.scale))?;
    let (lr, clamped_lr) = add_noise_and_clamp(low, cfg.noise_lr, &mut rng);
    Ok(Degraded {
        sample: PairedSample {
            lr,
            hr,
            id: format!("{index}"),
        },
        clamped_hr,
        clamped_lr,
    })
}

/// `count` synthetic `hr_size²` images and their degraded pairs.
pub fn synthetic_pairs(
    count: usize,
    hr_size: usize,
    cfg: &DegradationConfig,
    workers: &Workers,
) -> Result<Vec<PairedSample>> {
    workers
        .map_indexed(count, |i| {
            let img = synthetic_image(hr_size, hr_size, cfg.seed, i as u64);
            let mut d = degrade_pair(&img, cfg, i as u64)?.sample;
            d.id = format!("synth_{i:05}");
            Ok(d)
        })
        .into_iter()
        .collect()
}

/// An aligned `patch × patch` LR crop and the matching HR crop.
pub fn random_crop(pair: &PairedSample, patch: usize, rng: &mut impl Rng) -> Result<PairedSample> {
    let s = pair.lr.shape();
    if patch == 0 || !patch.is_multiple_of(4) {
        return Err(Error::shape("random_crop", format!("patch {patch} must be a positive multiple of 4")));
    }
    if patch > s.h || patch > s.w {
        return Err(Error::shape(
            "random_crop",
            format!("patch {patch} is larger than the {}x{} LR image {}", s.h, s.w, pair.id),
        ));
    }
    let r = pair
        .ratio()
        .ok_or_else(|| Error::shape("random_crop", format!("{} is not an aligned pair", pair.id)))?;
    let y = rng.random_range(0..=s.h - patch);
    let x = rng.random_range(0..=s.w - patch);
    Ok(PairedSample {
        lr: pair.lr.crop(y, x, patch, patch)?,
        hr: pair.hr.crop(y * r, x * r, patch * r, patch * r)?,
        id: pair.id.clone(),
    })
}

/// Applies `t` to both images.
pub fn transform(pair: &PairedSample, t: Dihedral) -> PairedSample {
    PairedSample {
        lr: t.apply(&pair.lr),
        hr: t.apply(&pair.hr),
        id: pair.id.clone(),
    }
}

/// One of the eight flips and rotations, drawn uniformly, applied jointly.
pub fn augment(pair: &PairedSample, rng: &mut impl Rng) -> PairedSample {
    transform(pair, Dihedral::from_index(rng.random_range(0..8)))
}

/// Matching PNG files in an LR and an HR directory.
#[derive(Clone, Debug)]
pub struct PairedDir {
    lr_dir: PathBuf,
    hr_dir: PathBuf,
    names: Vec<String>,
}

impl PairedDir {
    /// Fails on the first file without a counterpart.
    pub fn open(lr_dir: &Path, hr_dir: &Path) -> Result<Self> {
        let (names, missing) = pair_names(lr_dir, hr_dir)?;
        if let Some(m) = missing.first() {
            return Err(m.to_error());
        }
        if names.is_empty() {
            return Err(Error::data(lr_dir, "no PNG files found"));
        }
        Ok(PairedDir {
            lr_dir: lr_dir.to_path_buf(),
            hr_dir: hr_dir.to_path_buf(),
            names,
        })
    }

    /// File names in lexicographic order.
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn load(&self, i: usize) -> Result<PairedSample> {
        let name = &self.names[i];
        let lr = load_png(&self.lr_dir.join(name))?;
        let hr = load_png(&self.hr_dir.join(name))?;
        let pair = PairedSample {
            lr,
            hr,
            id: name.clone(),
        };
        if pair.ratio() != Some(4) {
            let (l, h) = (pair.lr.shape(), pair.hr.shape());
            return Err(Error::data(
                self.hr_dir.join(name),
                format!("HR is {}x{} but LR is {}x{}; expected exactly 4x", h.h, h.w, l.h, l.w),
            ));
        }
        Ok(pair)
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<PairedSample>> + '_ {
        (0..self.names.len()).map(|i| self.load(i))
    }
}

/// Loads every pair of the two directories in file-name order.
pub fn load_paired_dir(lr_dir: &Path, hr_dir: &Path) -> Result<Vec<PairedSample>> {
    PairedDir::open(lr_dir, hr_dir)?.iter().collect()
}
