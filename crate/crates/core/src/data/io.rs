//! 8-bit PNG images and directory pairing.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

/// Loads a PNG as `(1, 3, h, w)` with values `v/255`. Grey and alpha
/// images are converted to RGB.
pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::data(path, format!("cannot read image: {e}")))?
        .to_rgb8();
    Ok(from_rgb8(&img))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let p = h * w;
    let mut data = vec![0.0f32; 3 * p];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * p + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data).expect("sized above")
}

/// Clamps to `[0, 1]` and rounds to the nearest 8-bit level.
pub fn to_rgb8<T: Scalar>(x: &Tensor<T>) -> Result<RgbImage> {
    let s = x.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::shape("to_rgb8", format!("expected (1, 3, h, w), got {s}")));
    }
    let p = s.plane();
    let d = x.data();
    let mut raw = Vec::with_capacity(3 * p);
    for i in 0..p {
        for c in 0..3 {
            raw.push(quantize(d[c * p + i].as_f64()));
        }
    }
    Ok(RgbImage::from_raw(s.w as u32, s.h as u32, raw).expect("sized above"))
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png<T: Scalar>(x: &Tensor<T>, path: &Path) -> Result<()> {
    to_rgb8(x)?
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot write image: {e}")))
}

/// File names of the PNGs in `dir`, sorted.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::data(dir, e.to_string()))?;
    let mut names = Vec::new();
    for entry in entries {
        let entry = entry?;
        let path = entry.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            names.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

/// A file present in one directory but not the other.
#[derive(Clone, Debug, PartialEq)]
pub struct Unpaired {
    pub path: PathBuf,
    pub missing_in: PathBuf,
}

impl Unpaired {
    pub fn to_error(&self) -> Error {
        Error::data(
            &self.path,
            format!("no counterpart in {}", self.missing_in.display()),
        )
    }
}

/// Names found in both directories (sorted) and every unpaired file.
pub fn pair_names(a: &Path, b: &Path) -> Result<(Vec<String>, Vec<Unpaired>)> {
    let la: BTreeSet<String> = list_pngs(a)?.into_iter().collect();
    let lb: BTreeSet<String> = list_pngs(b)?.into_iter().collect();
    let both = la.intersection(&lb).cloned().collect();
    let mut missing: Vec<Unpaired> = la
        .difference(&lb)
        .map(|n| Unpaired {
            path: a.join(n),
            missing_in: b.to_path_buf(),
        })
        .collect();
    missing.extend(lb.difference(&la).map(|n| Unpaired {
        path: b.join(n),
        missing_in: a.to_path_buf(),
    }));
    Ok((both, missing))
}
