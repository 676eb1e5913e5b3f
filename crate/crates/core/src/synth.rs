//! Seeded synthetic scenes with a known medium.

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{GaussianParams, NUM_PARAMS};
use crate::image::Image;
use crate::medium::{compose_fog, compose_seathru};
use crate::render::{render, RenderOutput};
use crate::trainer::{Point, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthMedium {
    Underwater,
    Fog,
    None,
}

impl std::str::FromStr for SynthMedium {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "underwater" => Ok(Self::Underwater),
            "fog" => Ok(Self::Fog),
            "none" => Ok(Self::None),
            other => Err(Error::invalid(format!("unknown medium mode {other:?} (expected underwater, fog or none)"))),
        }
    }
}

/// Ground-truth medium written next to a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MediumTruth {
    pub mode: SynthMedium,
    /// Backscatter color at infinite distance.
    pub gamma_inf: [f64; 3],
    /// Backscatter coefficient `β^B` (underwater mode).
    pub beta_b: [f64; 3],
    /// Attenuation coefficient of the direct signal; `α_c` in fog mode.
    pub attenuation: [f64; 3],
}

impl MediumTruth {
    pub fn underwater() -> Self {
        Self { mode: SynthMedium::Underwater, gamma_inf: [0.08, 0.25, 0.35], beta_b: [1.2, 1.0, 0.9], attenuation: [0.35, 0.15, 0.1] }
    }

    pub fn fog() -> Self {
        Self { mode: SynthMedium::Fog, gamma_inf: [0.6, 0.6, 0.6], beta_b: [0.0; 3], attenuation: [0.3, 0.3, 0.3] }
    }

    pub fn none() -> Self {
        Self { mode: SynthMedium::None, gamma_inf: [0.0; 3], beta_b: [0.0; 3], attenuation: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_gaussians: usize,
    pub width: usize,
    pub height: usize,
    /// Views on the camera ring; `eval_views` of them are held out.
    pub n_views: usize,
    pub eval_views: usize,
    pub ring_radius: f64,
    /// Camera height above the ring plane.
    pub ring_height: f64,
    /// Horizontal angle covered by the ring, in radians.
    pub ring_arc: f64,
    /// Focal length as a multiple of the image width.
    pub focal_factor: f64,
    /// Fraction of Gaussians given a near-black color.
    pub dark_fraction: f64,
    pub medium: MediumTruth,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_gaussians: 30,
            width: 64,
            height: 64,
            n_views: 14,
            eval_views: 2,
            ring_radius: 3.0,
            ring_height: 0.5,
            ring_arc: std::f64::consts::FRAC_PI_2,
            focal_factor: 1.6,
            dark_fraction: 0.2,
            medium: MediumTruth::underwater(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_gaussians == 0 || self.width == 0 || self.height == 0 || self.n_views == 0 {
            return Err(Error::invalid("synthetic scene counts must be positive"));
        }
        if self.eval_views >= self.n_views {
            return Err(Error::invalid("at least one training view is required"));
        }
        if !(self.ring_radius > 0.0 && self.focal_factor > 0.0) {
            return Err(Error::invalid("ring radius and focal factor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub views: Vec<View>,
    /// Medium-free renders of every view.
    pub clean: Vec<Image>,
    /// Rendered depth of every view.
    pub depth: Vec<Image>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub points: Vec<Point>,
    /// The generating Gaussians as a raw `N × 59` slice.
    pub gaussians: DMatrix<f64>,
    pub truth: MediumTruth,
}

impl SyntheticScene {
    pub fn train_views(&self) -> Vec<View> {
        self.train.iter().map(|&i| self.views[i].clone()).collect()
    }

    pub fn eval_views(&self) -> Vec<View> {
        self.eval.iter().map(|&i| self.views[i].clone()).collect()
    }
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| rng.gen_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return q.map(|v| v / n);
        }
    }
}

/// Evenly spaced evaluation views, spread over the ring.
fn split(n: usize, eval: usize) -> (Vec<usize>, Vec<usize>) {
    let held: Vec<usize> = (0..eval).map(|k| ((2 * k + 1) * n) / (2 * eval)).collect();
    let train = (0..n).filter(|i| !held.contains(i)).collect();
    (train, held)
}

/// Composes a clean render with the medium. Each pixel's covered fraction sits
/// at its surface depth `z / alpha`; the uncovered remainder looks into open
/// water at infinite depth and sees `γ∞`.
fn apply_medium(out: &RenderOutput, m: &MediumTruth) -> Result<Image> {
    let surface = out.depth.zip_map(&out.alpha, |z, a| if a > 0.0 { z / a } else { 0.0 });
    let (mut img, coef) = match m.mode {
        SynthMedium::None => return Ok(out.color.clone()),
        SynthMedium::Fog => (compose_fog(&out.color, &surface, m.attenuation, m.gamma_inf)?, m.attenuation),
        SynthMedium::Underwater => {
            (compose_seathru(&out.color, &surface, m.attenuation, m.beta_b, m.gamma_inf)?, m.beta_b)
        }
    };
    for y in 0..img.height() {
        for x in 0..img.width() {
            let open = 1.0 - out.alpha.get(x, y, 0);
            let z = surface.get(x, y, 0);
            for c in 0..3 {
                let v = img.get(x, y, c) + open * m.gamma_inf[c] * (-coef[c] * z).exp();
                img.set(x, y, c, v);
            }
        }
    }
    Ok(img)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_dark = (spec.n_gaussians as f64 * spec.dark_fraction).round() as usize;
    let mut rows = Vec::with_capacity(spec.n_gaussians);
    let mut points = Vec::with_capacity(spec.n_gaussians);
    for i in 0..spec.n_gaussians {
        let position = [0; 3].map(|_| rng.gen_range(-0.5..0.5));
        let scale = [0; 3].map(|_| rng.gen_range(0.08..0.2));
        let rotation = random_unit_quaternion(&mut rng);
        let opacity = rng.gen_range(0.9..0.99);
        let color = if i < n_dark { [0; 3].map(|_| rng.gen_range(0.0..0.02)) } else { [0; 3].map(|_| rng.gen_range(0.1..0.9)) };
        rows.push(GaussianParams::new(position, scale, rotation, opacity, color));
        points.push(Point { position, color });
    }
    let gaussians = DMatrix::from_fn(rows.len(), NUM_PARAMS, |i, k| rows[i].0[k]);

    let (w, h) = (spec.width, spec.height);
    let focal = spec.focal_factor * w as f64;
    let mut views = Vec::with_capacity(spec.n_views);
    let mut clean = Vec::with_capacity(spec.n_views);
    let mut depth = Vec::with_capacity(spec.n_views);
    for v in 0..spec.n_views {
        let t = if spec.n_views == 1 { 0.5 } else { v as f64 / (spec.n_views - 1) as f64 };
        let angle = (t - 0.5) * spec.ring_arc;
        let eye = Vector3::new(spec.ring_radius * angle.sin(), -spec.ring_height, -spec.ring_radius * angle.cos());
        let cam = Camera::look_at(w, h, focal, eye, Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0))?;
        let out = render(&gaussians, &cam);
        let image = apply_medium(&out, &spec.medium)?;
        views.push(View { camera: cam, image });
        clean.push(out.color);
        depth.push(out.depth);
    }
    let (train, eval) = split(spec.n_views, spec.eval_views);
    Ok(SyntheticScene { views, clean, depth, train, eval, points, gaussians, truth: spec.medium })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: MediumTruth) -> SyntheticSpec {
        SyntheticSpec { n_gaussians: 10, width: 24, height: 20, n_views: 4, eval_views: 1, medium: mode, ..SyntheticSpec::default() }
    }

    #[test]
    fn none_mode_equals_clean_render() {
        let s = generate_synthetic(&small(MediumTruth::none())).unwrap();
        for (v, c) in s.views.iter().zip(&s.clean) {
            assert_eq!(v.image.data(), c.data());
        }
    }

    #[test]
    fn underwater_pixels_follow_formation_model() {
        let s = generate_synthetic(&small(MediumTruth::underwater())).unwrap();
        let t = s.truth;
        let mut covered = 0;
        for (v, z) in s.views.iter().zip(&s.depth) {
            let out = render(&s.gaussians, &v.camera);
            for (x, y) in [(3, 4), (12, 10), (20, 15), (11, 9)] {
                let a = out.alpha.get(x, y, 0);
                let zs = if a > 0.0 { z.get(x, y, 0) / a } else { 0.0 };
                covered += usize::from(a > 0.0);
                for ch in 0..3 {
                    let expected = out.color.get(x, y, ch) * (-t.attenuation[ch] * zs).exp()
                        + t.gamma_inf[ch] * (1.0 - (-t.beta_b[ch] * zs).exp())
                        + (1.0 - a) * t.gamma_inf[ch] * (-t.beta_b[ch] * zs).exp();
                    assert!((v.image.get(x, y, ch) - expected).abs() < 1e-12);
                }
            }
        }
        assert!(covered > 0);
    }

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small(MediumTruth::fog())).unwrap();
        let b = generate_synthetic(&small(MediumTruth::fog())).unwrap();
        for (x, y) in a.views.iter().zip(&b.views) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.camera, y.camera);
        }
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn split_is_disjoint() {
        let s = generate_synthetic(&SyntheticSpec { n_gaussians: 3, width: 8, height: 8, ..SyntheticSpec::default() }).unwrap();
        assert_eq!(s.train.len(), 12);
        assert_eq!(s.eval.len(), 2);
        assert!(s.eval.iter().all(|e| !s.train.contains(e)));
    }
}
