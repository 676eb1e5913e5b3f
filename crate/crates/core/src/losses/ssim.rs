//! Windowed SSIM with an 11×11 Gaussian window (σ = 1.5), zero padded so the
//! map has the image's size, and its gradient with respect to the second image.

use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable zero-padded "same" filtering of a single-channel plane.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let half = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - half;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - half;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

struct Stats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov_xy: Vec<f64>,
}

fn stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Stats {
    let mu_x = blur(x, w, h, k);
    let mu_y = blur(y, w, h, k);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let exx = blur(&sq(x, x), w, h, k);
    let eyy = blur(&sq(y, y), w, h, k);
    let exy = blur(&sq(x, y), w, h, k);
    let n = w * h;
    let var_x = (0..n).map(|i| exx[i] - mu_x[i] * mu_x[i]).collect();
    let var_y = (0..n).map(|i| eyy[i] - mu_y[i] * mu_y[i]).collect();
    let cov_xy = (0..n).map(|i| exy[i] - mu_x[i] * mu_y[i]).collect();
    Stats { mu_x, mu_y, var_x, var_y, cov_xy }
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &Image, b: &Image) -> f64 {
    ssim_with_grad(a, b, false).0
}

/// SSIM and, when requested, `∂ SSIM / ∂ b`.
pub fn ssim_with_grad(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Image>) {
    assert!(a.same_shape(b), "ssim: image shapes differ");
    let (w, h, ch) = (a.width(), a.height(), a.channels());
    let k = kernel();
    let count = (w * h * ch) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::zeros(w, h, ch));
    for c in 0..ch {
        let x = a.channel(c);
        let y = b.channel(c);
        let s = stats(&x, &y, w, h, &k);
        let n = w * h;
        let mut g_mu = vec![0.0; n];
        let mut g_eyy = vec![0.0; n];
        let mut g_exy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (s.mu_x[i], s.mu_y[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * s.cov_xy[i] + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = s.var_x[i] + s.var_y[i] + C2;
            let v = a1 * a2 / (b1 * b2);
            total += v;
            if want_grad {
                let d = b1 * b2;
                g_mu[i] = (2.0 * mx * a2 - 2.0 * mx * a1) / d - v * (2.0 * my / b1 - 2.0 * my / b2);
                g_eyy[i] = -v / b2;
                g_exy[i] = 2.0 * a1 / d;
            }
        }
        if let Some(g) = grad.as_mut() {
            let (bm, be, bx) = (blur(&g_mu, w, h, &k), blur(&g_eyy, w, h, &k), blur(&g_exy, w, h, &k));
            for i in 0..n {
                let v = (bm[i] + 2.0 * y[i] * be[i] + x[i] * bx[i]) / count;
                g.data_mut()[i * ch + c] = v;
            }
        }
    }
    (total / count, grad)
}
