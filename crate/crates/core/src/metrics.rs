//! Image quality metrics.

use crate::error::Result;
use crate::image::Image;
use crate::medium::MediumParams;
use crate::tensor::CpFactors;
use crate::trainer::{forward, MediumMode, View};

pub use crate::losses::ssim;

/// `10 · log10(1 / MSE)` over all pixels and channels; `+∞` for identical images.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    assert!(a.same_shape(b), "psnr: image shapes differ");
    let n = a.len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Mean PSNR over pairs, with each rendering clamped to `[0, 1]` first.
pub fn mean_psnr<'a>(pairs: impl IntoIterator<Item = (&'a Image, &'a Image)>) -> f64 {
    let v: Vec<f64> = pairs.into_iter().map(|(r, g)| psnr(&r.clamped01(), g)).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewScore {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub views: Vec<ViewScore>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Scores composed renders of `views` against their images.
pub fn evaluate(factors: &CpFactors, medium: &MediumParams, views: &[View], mode: MediumMode) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(views.len());
    for v in views {
        let r = forward(factors, medium, &v.camera, mode)?.composed.clamped01();
        scores.push(ViewScore { psnr: psnr(&r, &v.image), ssim: ssim(&r, &v.image) });
    }
    let n = scores.len().max(1) as f64;
    let mean_psnr = scores.iter().map(|s| s.psnr).sum::<f64>() / n;
    let mean_ssim = scores.iter().map(|s| s.ssim).sum::<f64>() / n;
    Ok(EvalReport { views: scores, mean_psnr, mean_ssim })
}
