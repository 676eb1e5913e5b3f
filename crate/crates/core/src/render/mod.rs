//! Software Gaussian rasterizer.
//!
//! Gaussians are projected with the EWA approximation, sorted by camera depth
//! and alpha-composited front to back:
//!
//! ```text
//! C = Σ_i c_i α_i Π_{j<i} (1 − α_j),   α_i = min(0.99, σ(o_i) · exp(−½ dᵀ Σ₂⁻¹ d))
//! ```
//!
//! Splats with `α_i < 1/255` are skipped and compositing stops before a splat
//! would drop the transmittance below `1e-4`. Depth is composited with the
//! same weights (unnormalized), and the background is black.

mod oracle;
mod project;
mod raster;

pub use oracle::render_oracle;
pub use project::{project, project_backward, ProjectedGrad, ScreenGaussian};
pub use raster::{render, render_backward, RenderGradients};

use crate::image::Image;

pub const ALPHA_MAX: f64 = 0.99;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
pub const COV2D_DILATION: f64 = 0.3;
pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// `H × W × 3`.
    pub color: Image,
    /// `H × W × 1`, alpha-weighted camera depth.
    pub depth: Image,
    /// `H × W × 1`, accumulated opacity `1 − T`.
    pub alpha: Image,
}

impl RenderOutput {
    pub(crate) fn black(width: usize, height: usize) -> Self {
        Self {
            color: Image::zeros(width, height, 3),
            depth: Image::zeros(width, height, 1),
            alpha: Image::zeros(width, height, 1),
        }
    }
}

#[cfg(test)]
mod tests;
