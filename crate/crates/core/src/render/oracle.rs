use nalgebra::DMatrix;

use super::project::{depth_order, project_slice};
use super::{RenderOutput, ALPHA_MAX, ALPHA_MIN, TRANSMITTANCE_MIN};
use crate::camera::Camera;

/// Reference rasterizer: every pixel visits every projected splat in exact
/// depth order, without tiles, footprint bounds or an early exit.
///
/// Splats past the transmittance cutoff are masked rather than skipped by a
/// `break`, so the composited function is the same as [`super::render`].
pub fn render_oracle(slice: &DMatrix<f64>, cam: &Camera) -> RenderOutput {
    let mut splats = project_slice(slice, cam);
    splats.sort_by(depth_order);
    let mut out = RenderOutput::black(cam.width, cam.height);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut color = [0.0; 3];
            let mut depth = 0.0;
            let mut done = false;
            for s in &splats {
                let dx = px - s.mean2d[0];
                let dy = py - s.mean2d[1];
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                let alpha = (s.alpha_base * (-0.5 * q).exp()).min(ALPHA_MAX);
                let active = !done && q >= 0.0 && alpha >= ALPHA_MIN;
                if active && t * (1.0 - alpha) < TRANSMITTANCE_MIN {
                    done = true;
                }
                if active && !done {
                    let w = alpha * t;
                    for c in 0..3 {
                        color[c] += s.color[c] * w;
                    }
                    depth += s.depth * w;
                    t *= 1.0 - alpha;
                }
            }
            for c in 0..3 {
                out.color.set(x, y, c, color[c]);
            }
            out.depth.set(x, y, 0, depth);
            out.alpha.set(x, y, 0, 1.0 - t);
        }
    }
    out
}
