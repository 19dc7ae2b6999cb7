//! Scoring a directory of predictions against ground truth.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::{load_png, pair_names};
use crate::error::{Error, Result};
use crate::metrics::{psnr_y, ssim, SsimParams};
use crate::tensor::Tensor;

/// Scores of one image pair; PSNR and SSIM on luma, range 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Score {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn score(name: &str, pred: &Tensor<f32>, gt: &Tensor<f32>) -> Result<Score> {
    Ok(Score {
        name: name.to_string(),
        psnr_db: psnr_y(pred, gt, 1.0)?,
        ssim: ssim(pred, gt, &SsimParams::default())?,
    })
}

/// Scored pairs plus every file that could not be scored.
#[derive(Debug, Default)]
pub struct Report {
    pub scores: Vec<Score>,
    pub errors: Vec<Error>,
}

impl Report {
    /// `(mean PSNR, mean SSIM)`; the PSNR mean is infinite if any row is.
    pub fn mean(&self) -> Option<(f64, f64)> {
        if self.scores.is_empty() {
            return None;
        }
        let n = self.scores.len() as f64;
        let p = self.scores.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let s = self.scores.iter().map(|s| s.ssim).sum::<f64>() / n;
        Some((p, s))
    }

    /// `path,psnr_db,ssim` rows, then a `MEAN` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("path,psnr_db,ssim\n");
        for s in &self.scores {
            let _ = writeln!(out, "{},{},{}", s.name, fmt_psnr(s.psnr_db), s.ssim);
        }
        if let Some((p, s)) = self.mean() {
            let _ = writeln!(out, "MEAN,{},{s}", fmt_psnr(p));
        }
        out
    }
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

/// Pairs `pred_dir` with `gt_dir` by file name and scores every pair.
pub fn eval_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<Report> {
    let (names, missing) = pair_names(pred_dir, gt_dir)?;
    let mut report = Report {
        errors: missing.iter().map(|m| m.to_error()).collect(),
        ..Report::default()
    };
    for name in names {
        let pred_path = pred_dir.join(&name);
        let scored = load_png(&pred_path).and_then(|p| {
            let g = load_png(&gt_dir.join(&name))?;
            if p.shape() != g.shape() {
                return Err(Error::data(
                    &pred_path,
                    format!("is {}x{} but ground truth is {}x{}", p.shape().h, p.shape().w, g.shape().h, g.shape().w),
                ));
            }
            score(&name, &p, &g).map_err(|e| Error::data(&pred_path, e.to_string()))
        });
        match scored {
            Ok(s) => report.scores.push(s),
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn offset_scores_twenty_db() {
        let gt = Tensor::<f32>::from_fn(Shape::new(1, 3, 16, 16), |_, c, y, x| ((c + y + x) % 9) as f32 / 10.0);
        let pred = gt.map(|v| v + 0.1);
        let s = score("a", &pred, &gt).unwrap();
        assert!((s.psnr_db - 20.0).abs() < 1e-5);
        let same = score("b", &gt, &gt).unwrap();
        assert_eq!(same.psnr_db, f64::INFINITY);
        assert!((same.ssim - 1.0).abs() < 1e-9);
        let r = Report {
            scores: vec![same],
            errors: vec![],
        };
        assert!(r.to_csv().contains("b,inf,1"));
        assert!(r.to_csv().contains("MEAN,inf,"));
    }
}
