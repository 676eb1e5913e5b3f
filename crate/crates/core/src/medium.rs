//! Adaptive medium estimation: backscatter from the medium depth and the
//! final underwater composition
//!
//! ```text
//! B_c = γ∞_c · (1 − exp(−relu(w_c · z_α + b_c)))
//! I_c = J_c · exp(−relu(F_c) · z_α) + B_c
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MediumParams {
    /// Backscatter color at infinite distance, kept non-negative.
    pub gamma_inf: [f64; 3],
    /// 1×1 convolution from the depth channel to three backscatter exponents.
    pub conv_w: [f64; 3],
    pub conv_b: [f64; 3],
}

impl MediumParams {
    pub const INITIAL_GAMMA: [f64; 3] = [0.1, 0.2, 0.3];

    /// Training start point: initial γ∞, weights drawn from `(0, 1]`, zero bias.
    pub fn initial(rng: &mut impl Rng) -> Self {
        let mut w = [0.0; 3];
        for v in &mut w {
            *v = 1.0 - rng.gen::<f64>();
        }
        Self { gamma_inf: Self::INITIAL_GAMMA, conv_w: w, conv_b: [0.0; 3] }
    }

    /// A medium that produces no backscatter.
    pub fn clear() -> Self {
        Self { gamma_inf: [0.0; 3], conv_w: [0.0; 3], conv_b: [0.0; 3] }
    }

    pub fn to_array(&self) -> [f64; 9] {
        let mut a = [0.0; 9];
        a[..3].copy_from_slice(&self.gamma_inf);
        a[3..6].copy_from_slice(&self.conv_w);
        a[6..].copy_from_slice(&self.conv_b);
        a
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self {
            gamma_inf: [a[0], a[1], a[2]],
            conv_w: [a[3], a[4], a[5]],
            conv_b: [a[6], a[7], a[8]],
        }
    }

    /// Project γ∞ back onto the non-negative orthant.
    pub fn clamp_gamma(&mut self) {
        for g in &mut self.gamma_inf {
            *g = g.max(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

fn ensure_depth(z: &Image, what: &str) -> Result<()> {
    if z.channels() != 1 {
        return Err(Error::invalid(format!("{what}: depth must have one channel")));
    }
    Ok(())
}

fn ensure_extent(a: &Image, b: &Image, what: &str) -> Result<()> {
    if !a.same_extent(b) {
        return Err(Error::invalid(format!(
            "{what}: {}x{} does not match {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

pub fn backscatter_image(z_alpha: &Image, m: &MediumParams) -> Image {
    let (w, h) = (z_alpha.width(), z_alpha.height());
    Image::from_fn(w, h, 3, |x, y, c| {
        let pre = m.conv_w[c] * z_alpha.get(x, y, 0) + m.conv_b[c];
        m.gamma_inf[c] * (1.0 - (-pre.max(0.0)).exp())
    })
}

pub fn compose_underwater(j: &Image, f_alpha: &Image, z_alpha: &Image, b: &Image) -> Result<Image> {
    j.ensure_shape(f_alpha, "attenuation image")?;
    j.ensure_shape(b, "backscatter image")?;
    ensure_depth(z_alpha, "compose_underwater")?;
    ensure_extent(j, z_alpha, "medium depth")?;
    if j.channels() != 3 {
        return Err(Error::invalid("compose_underwater expects RGB images"));
    }
    Ok(Image::from_fn(j.width(), j.height(), 3, |x, y, c| {
        let att = (-f_alpha.get(x, y, c).max(0.0) * z_alpha.get(x, y, 0)).exp();
        j.get(x, y, c) * att + b.get(x, y, c)
    }))
}

/// Transmission of the direct signal, `exp(−relu(F^α) · z_α)`.
pub fn attenuation_map(f_alpha: &Image, z_alpha: &Image) -> Result<Image> {
    ensure_depth(z_alpha, "attenuation_map")?;
    ensure_extent(f_alpha, z_alpha, "attenuation_map")?;
    Ok(Image::from_fn(f_alpha.width(), f_alpha.height(), f_alpha.channels(), |x, y, c| {
        (-f_alpha.get(x, y, c).max(0.0) * z_alpha.get(x, y, 0)).exp()
    }))
}

/// Fog model with a per-channel constant attenuation `α_c`, which also drives
/// the backscatter: `I = J·A + γ∞·(1 − A)` with `A = exp(−α_c z)`.
pub fn compose_fog(j: &Image, z: &Image, alpha_c: [f64; 3], gamma_inf: [f64; 3]) -> Result<Image> {
    ensure_depth(z, "compose_fog")?;
    ensure_extent(j, z, "compose_fog")?;
    if j.channels() != 3 {
        return Err(Error::invalid("compose_fog expects an RGB image"));
    }
    Ok(Image::from_fn(j.width(), j.height(), 3, |x, y, c| {
        let v = j.get(x, y, c);
        if alpha_c[c] == 0.0 {
            return v;
        }
        let a = (-alpha_c[c] * z.get(x, y, 0)).exp();
        v * a + gamma_inf[c] * (1.0 - a)
    }))
}

/// Separate attenuation and backscatter model used by the synthetic generator:
/// `I = J·exp(−f_c z) + γ∞_c (1 − exp(−β_c z))`.
pub fn compose_seathru(j: &Image, z: &Image, f_alpha: [f64; 3], beta_b: [f64; 3], gamma_inf: [f64; 3]) -> Result<Image> {
    ensure_depth(z, "compose_seathru")?;
    ensure_extent(j, z, "compose_seathru")?;
    Ok(Image::from_fn(j.width(), j.height(), 3, |x, y, c| {
        let zz = z.get(x, y, 0);
        j.get(x, y, c) * (-f_alpha[c] * zz).exp() + gamma_inf[c] * (1.0 - (-beta_b[c] * zz).exp())
    }))
}

#[derive(Debug, Clone)]
pub struct AmeGradients {
    pub j: Image,
    /// With respect to the rendered (pre-relu) attenuation image.
    pub f_alpha: Image,
    pub z_alpha: Image,
    pub medium: MediumParams,
}

/// Backward pass of [`backscatter_image`] followed by [`compose_underwater`].
///
/// `d_backscatter` adds loss gradients that reach `B` directly rather than
/// through `I`.
pub fn ame_backward(
    j: &Image,
    f_alpha: &Image,
    z_alpha: &Image,
    m: &MediumParams,
    d_i: &Image,
    d_backscatter: Option<&Image>,
) -> Result<AmeGradients> {
    j.ensure_shape(f_alpha, "attenuation image")?;
    j.ensure_shape(d_i, "image gradient")?;
    ensure_depth(z_alpha, "ame_backward")?;
    ensure_extent(j, z_alpha, "medium depth")?;
    if let Some(db) = d_backscatter {
        j.ensure_shape(db, "backscatter gradient")?;
    }
    let (w, h) = (j.width(), j.height());
    let mut dj = Image::zeros(w, h, 3);
    let mut df = Image::zeros(w, h, 3);
    let mut dz = Image::zeros(w, h, 1);
    let mut dm = [0.0; 9];
    for y in 0..h {
        for x in 0..w {
            let z = z_alpha.get(x, y, 0);
            let mut gz = 0.0;
            for c in 0..3 {
                let gi = d_i.get(x, y, c);
                let fa = f_alpha.get(x, y, c);
                let fpos = fa.max(0.0);
                let att = (-fpos * z).exp();
                let jv = j.get(x, y, c);
                dj.set(x, y, c, gi * att);
                if fa > 0.0 {
                    df.set(x, y, c, -gi * jv * att * z);
                }
                gz -= gi * jv * att * fpos;

                let gb = gi + d_backscatter.map_or(0.0, |d| d.get(x, y, c));
                let pre = m.conv_w[c] * z + m.conv_b[c];
                let e = (-pre.max(0.0)).exp();
                dm[c] += gb * (1.0 - e);
                if pre > 0.0 {
                    let gpre = gb * m.gamma_inf[c] * e;
                    dm[3 + c] += gpre * z;
                    dm[6 + c] += gpre;
                    gz += gpre * m.conv_w[c];
                }
            }
            dz.set(x, y, 0, gz);
        }
    }
    Ok(AmeGradients { j: dj, f_alpha: df, z_alpha: dz, medium: MediumParams::from_array(dm) })
}
