//! Training objectives and their gradients.
//!
//! All terms are sums over pixels (and channels) rather than means; the
//! weights absorb scale.

mod ssim;

pub use ssim::{ssim, ssim_with_grad};

use crate::error::Result;
use crate::image::Image;

pub const BACKSCATTER_K: f64 = 1000.0;
const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// Depth-weighted L1.
    pub dr: f64,
    /// D-SSIM.
    pub ssim: f64,
    /// Color correction.
    pub cc: f64,
    /// Backscatter (dark-channel style).
    pub bs: f64,
    /// Depth total variation.
    pub tv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { dr: 0.8, ssim: 0.2, cc: 1.0, bs: 1.0, tv: 1.0 }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 5] {
        [self.dr, self.ssim, self.cc, self.bs, self.tv]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub dr: f64,
    pub ssim: f64,
    pub cc: f64,
    pub bs: f64,
    pub tv: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [f64; 5] {
        [self.dr, self.ssim, self.cc, self.bs, self.tv]
    }

    pub fn csv_header() -> &'static str {
        "step,dr,ssim,cc,bs,tv,total"
    }

    pub fn csv_row(&self, step: u64) -> String {
        format!("{step},{},{},{},{},{},{}", self.dr, self.ssim, self.cc, self.bs, self.tv, self.total)
    }
}

fn mean_std(v: &[f64]) -> (f64, f64, bool) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var > STD_FLOOR {
        (mean, var.sqrt(), true)
    } else {
        (mean, STD_FLOOR.sqrt(), false)
    }
}

/// Color correction: channel means of `J` pulled to 0.5 and channel spreads
/// matched to the direct signal `D` (treated as a constant).
pub fn loss_cc(j: &Image, d: &Image) -> f64 {
    loss_cc_with_grad(j, d).0
}

pub fn loss_cc_with_grad(j: &Image, d: &Image) -> (f64, Image) {
    assert!(j.same_shape(d), "loss_cc: shapes differ");
    let ch = j.channels();
    let n = (j.width() * j.height()) as f64;
    let mut grad = Image::zeros(j.width(), j.height(), ch);
    let mut loss = 0.0;
    for c in 0..ch {
        let jc = j.channel(c);
        let (mj, sj, live) = mean_std(&jc);
        let (_, sd, _) = mean_std(&d.channel(c));
        loss += (mj - 0.5) * (mj - 0.5) + (sj - sd) * (sj - sd);
        for (i, &v) in jc.iter().enumerate() {
            let mut g = 2.0 * (mj - 0.5) / n;
            if live {
                g += 2.0 * (sj - sd) * (v - mj) / (n * sj);
            }
            grad.data_mut()[i * ch + c] = g;
        }
    }
    (loss, grad)
}

/// `Σ relu(D) + k · relu(−D)`.
pub fn loss_bs(d: &Image, k: f64) -> f64 {
    loss_bs_with_grad(d, k).0
}

pub fn loss_bs_with_grad(d: &Image, k: f64) -> (f64, Image) {
    let loss = d.data().iter().map(|&v| v.max(0.0) + k * (-v).max(0.0)).sum();
    let grad = d.map(|v| {
        if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -k
        } else {
            0.0
        }
    });
    (loss, grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Depth-weighted L1: `Σ z_u · |G − I|`.
pub fn loss_dr(gt: &Image, rendered: &Image, z_u: &Image) -> f64 {
    loss_dr_with_grad(gt, rendered, z_u).0
}

/// Returns the loss with gradients for `rendered` and `z_u`.
pub fn loss_dr_with_grad(gt: &Image, rendered: &Image, z_u: &Image) -> (f64, Image, Image) {
    assert!(gt.same_shape(rendered), "loss_dr: image shapes differ");
    assert!(gt.same_extent(z_u) && z_u.channels() == 1, "loss_dr: depth shape");
    let (w, h, ch) = (gt.width(), gt.height(), gt.channels());
    let mut d_i = Image::zeros(w, h, ch);
    let mut d_z = Image::zeros(w, h, 1);
    let mut loss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let z = z_u.get(x, y, 0);
            let mut abs_sum = 0.0;
            for c in 0..ch {
                let r = rendered.get(x, y, c) - gt.get(x, y, c);
                abs_sum += r.abs();
                d_i.set(x, y, c, z * sign(r));
            }
            loss += z * abs_sum;
            d_z.set(x, y, 0, abs_sum);
        }
    }
    (loss, d_i, d_z)
}

fn tv_one(z: &Image, grad: &mut Image) -> f64 {
    let (w, h) = (z.width(), z.height());
    let mut loss = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = z.get(x, y, 0);
            if x + 1 < w {
                let d = z.get(x + 1, y, 0) - v;
                loss += d.abs();
                let s = sign(d);
                grad.data_mut()[y * w + x + 1] += s;
                grad.data_mut()[y * w + x] -= s;
            }
            if y + 1 < h {
                let d = z.get(x, y + 1, 0) - v;
                loss += d.abs();
                let s = sign(d);
                grad.data_mut()[(y + 1) * w + x] += s;
                grad.data_mut()[y * w + x] -= s;
            }
        }
    }
    loss
}

/// Anisotropic total variation summed over both depth maps.
pub fn loss_tv(z_u: &Image, z_alpha: &Image) -> f64 {
    loss_tv_with_grad(z_u, z_alpha).0
}

pub fn loss_tv_with_grad(z_u: &Image, z_alpha: &Image) -> (f64, Image, Image) {
    let mut gu = Image::zeros(z_u.width(), z_u.height(), 1);
    let mut ga = Image::zeros(z_alpha.width(), z_alpha.height(), 1);
    let loss = tv_one(z_u, &mut gu) + tv_one(z_alpha, &mut ga);
    (loss, gu, ga)
}

/// `(1 − SSIM(G, I)) / 2`.
pub fn loss_dssim(gt: &Image, rendered: &Image) -> f64 {
    (1.0 - ssim(gt, rendered)) / 2.0
}

pub fn loss_dssim_with_grad(gt: &Image, rendered: &Image) -> (f64, Image) {
    let (s, g) = ssim_with_grad(gt, rendered, true);
    let mut g = g.expect("gradient requested");
    g.scale(-0.5);
    ((1.0 - s) / 2.0, g)
}

/// Everything the total loss reads.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    /// Ground truth `G`.
    pub gt: &'a Image,
    /// Composed underwater image `I`.
    pub rendered: &'a Image,
    /// Medium-free restoration `J`.
    pub restored: &'a Image,
    /// Direct signal `D = G − B`.
    pub direct: &'a Image,
    pub z_u: &'a Image,
    pub z_alpha: &'a Image,
    pub bs_k: f64,
}

#[derive(Debug, Clone)]
pub struct LossGradients {
    pub rendered: Image,
    pub restored: Image,
    pub direct: Image,
    pub z_u: Image,
    pub z_alpha: Image,
}

/// Weighted total; terms with zero weight are neither evaluated nor differentiated.
///
/// Stop-gradients: `direct` is a fixed target inside the color-correction
/// term, and `z_u` is a fixed weight inside the depth-weighted L1 term.
pub fn total_loss(inp: &LossInputs<'_>, w: &LossWeights) -> Result<(LossBreakdown, LossGradients)> {
    inp.gt.ensure_shape(inp.rendered, "rendered image")?;
    inp.gt.ensure_shape(inp.restored, "restored image")?;
    inp.gt.ensure_shape(inp.direct, "direct signal")?;
    let (wd, ht, ch) = (inp.gt.width(), inp.gt.height(), inp.gt.channels());
    let mut grads = LossGradients {
        rendered: Image::zeros(wd, ht, ch),
        restored: Image::zeros(wd, ht, ch),
        direct: Image::zeros(wd, ht, ch),
        z_u: Image::zeros(wd, ht, 1),
        z_alpha: Image::zeros(wd, ht, 1),
    };
    let mut out = LossBreakdown::default();
    let add_scaled = |dst: &mut Image, src: &Image, s: f64| {
        for (a, b) in dst.data_mut().iter_mut().zip(src.data()) {
            *a += s * b;
        }
    };
    if w.dr != 0.0 {
        // The depth acts as a per-pixel weight and receives no gradient here;
        // otherwise shrinking z_u would be a way to lower the reconstruction term.
        let (l, di, _) = loss_dr_with_grad(inp.gt, inp.rendered, inp.z_u);
        out.dr = l;
        add_scaled(&mut grads.rendered, &di, w.dr);
    }
    if w.ssim != 0.0 {
        let (l, di) = loss_dssim_with_grad(inp.gt, inp.rendered);
        out.ssim = l;
        add_scaled(&mut grads.rendered, &di, w.ssim);
    }
    if w.cc != 0.0 {
        let (l, dj) = loss_cc_with_grad(inp.restored, inp.direct);
        out.cc = l;
        add_scaled(&mut grads.restored, &dj, w.cc);
    }
    if w.bs != 0.0 {
        let (l, dd) = loss_bs_with_grad(inp.direct, inp.bs_k);
        out.bs = l;
        add_scaled(&mut grads.direct, &dd, w.bs);
    }
    if w.tv != 0.0 {
        let (l, gu, ga) = loss_tv_with_grad(inp.z_u, inp.z_alpha);
        out.tv = l;
        add_scaled(&mut grads.z_u, &gu, w.tv);
        add_scaled(&mut grads.z_alpha, &ga, w.tv);
    }
    out.total = w.dr * out.dr + w.ssim * out.ssim + w.cc * out.cc + w.bs * out.bs + w.tv * out.tv;
    Ok((out, grads))
}
