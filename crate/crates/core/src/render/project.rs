use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::COV2D_DILATION;
use crate::camera::Camera;
use crate::gaussian::{
    self, activate, rotation_matrix, rotation_matrix_backward, sh_basis_with_grad, sh_index, ActivatedGaussian,
    GaussianParams, LOG_SCALE, NUM_PARAMS, OPACITY, POSITION, ROTATION, SH_BASIS,
};
use crate::render::ALPHA_MIN;

/// A Gaussian after projection to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreenGaussian {
    /// Row of the slice this splat came from.
    pub index: usize,
    /// Pixel coordinates; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    pub mean2d: [f64; 2],
    /// Dilated 2D covariance `(xx, xy, yy)`.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, `(xx, xy, yy)`.
    pub conic: [f64; 3],
    /// Camera-space z.
    pub depth: f64,
    pub color: [f64; 3],
    /// Activated opacity σ(o).
    pub alpha_base: f64,
    /// Pixel radius beyond which `α < 1/255`; 0 when the splat can never reach it.
    pub radius: f64,
}

struct Geometry {
    rot: Matrix3<f64>,
    cov3d: Matrix3<f64>,
    t: Vector3<f64>,
    jw: Matrix2x3<f64>,
    cov2d: Matrix2<f64>,
}

fn geometry(g: &ActivatedGaussian, cam: &Camera) -> Geometry {
    let rot = rotation_matrix(g.rotation);
    let m = rot * Matrix3::from_diagonal(&g.scale);
    let cov3d = m * m.transpose();
    let w = cam.rotation();
    let t = w * g.position + cam.translation();
    let j = jacobian(cam, &t);
    let jw = j * w;
    let cov2d = jw * cov3d * jw.transpose() + Matrix2::identity() * COV2D_DILATION;
    Geometry { rot, cov3d, t, jw, cov2d }
}

fn jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(cam.fx * iz, 0.0, -cam.fx * t.x * iz * iz, 0.0, cam.fy * iz, -cam.fy * t.y * iz * iz)
}

fn view_color(g: &ActivatedGaussian, cam: &Camera) -> ([f64; 3], [f64; 3]) {
    let v = g.position - cam.center();
    let dir = v.try_normalize(1e-12).unwrap_or_else(|| Vector3::new(0.0, 0.0, 1.0));
    let (basis, _) = sh_basis_with_grad(&dir);
    let mut raw = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for (c, r) in raw.iter_mut().enumerate() {
            *r += b * g.sh[k][c];
        }
    }
    (raw.map(|v| v.max(0.0)), raw)
}

/// Perspective (EWA) projection; `None` when behind the near plane or when the
/// 3σ footprint misses the frame.
pub fn project(g: &ActivatedGaussian, cam: &Camera) -> Option<ScreenGaussian> {
    let geo = geometry(g, cam);
    if !(geo.t.z > cam.near) {
        return None;
    }
    let (a, b, c) = (geo.cov2d[(0, 0)], geo.cov2d[(0, 1)], geo.cov2d[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mean2d = [cam.fx * geo.t.x / geo.t.z + cam.cx, cam.fy * geo.t.y / geo.t.z + cam.cy];
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let extent = 3.0 * lambda_max.sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean2d[0] + extent < 0.0 || mean2d[0] - extent > w || mean2d[1] + extent < 0.0 || mean2d[1] - extent > h {
        return None;
    }
    let radius = if g.opacity > ALPHA_MIN {
        (2.0 * (g.opacity / ALPHA_MIN).ln() * lambda_max).sqrt()
    } else {
        0.0
    };
    let (color, _) = view_color(g, cam);
    Some(ScreenGaussian {
        index: 0,
        mean2d,
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: geo.t.z,
        color,
        alpha_base: g.opacity,
        radius,
    })
}

/// Gradient of the loss with respect to one splat's screen-space quantities.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ProjectedGrad {
    pub mean2d: [f64; 2],
    /// With respect to `(xx, xy, yy)` where `xy` enters the quadratic form twice.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub alpha_base: f64,
    pub depth: f64,
}

impl ProjectedGrad {
    pub(crate) fn add(&mut self, o: &ProjectedGrad) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.color[i] += o.color[i];
        }
        self.alpha_base += o.alpha_base;
        self.depth += o.depth;
    }
}

/// Chain screen-space gradients back through color evaluation, projection
/// and activation to the 59 raw parameters.
pub fn project_backward(raw: &GaussianParams, cam: &Camera, grad: &ProjectedGrad) -> [f64; NUM_PARAMS] {
    let mut out = [0.0; NUM_PARAMS];
    let g = activate(raw);
    let geo = geometry(&g, cam);
    let mut d_pos = Vector3::zeros();

    // View-dependent color.
    let v = g.position - cam.center();
    let vnorm = v.norm();
    if vnorm > 1e-12 {
        let dir = v / vnorm;
        let (basis, dbasis) = sh_basis_with_grad(&dir);
        let (_, raw_color) = view_color(&g, cam);
        let mut d_dir = Vector3::zeros();
        for c in 0..3 {
            if raw_color[c] < 0.0 {
                continue;
            }
            let dc = grad.color[c];
            for k in 0..SH_BASIS {
                out[sh_index(k, c)] += basis[k] * dc;
                for a in 0..3 {
                    d_dir[a] += dc * g.sh[k][c] * dbasis[k][a];
                }
            }
        }
        d_pos += (d_dir - dir * dir.dot(&d_dir)) / vnorm;
    }

    out[OPACITY] = grad.alpha_base * g.opacity * (1.0 - g.opacity);

    // Conic -> 2D covariance.
    let (a, b, c) = (geo.cov2d[(0, 0)], geo.cov2d[(0, 1)], geo.cov2d[(1, 1)]);
    let det = a * c - b * b;
    let q = Matrix2::new(c / det, -b / det, -b / det, a / det);
    let g_q = Matrix2::new(grad.conic[0], 0.5 * grad.conic[1], 0.5 * grad.conic[1], grad.conic[2]);
    let g_cov2d = -(q * g_q * q);

    // 2D covariance -> 3D covariance and the projection Jacobian.
    let g_cov3d = geo.jw.transpose() * g_cov2d * geo.jw;
    let g_jw = 2.0 * g_cov2d * geo.jw * geo.cov3d;
    let w = cam.rotation();
    let g_j = g_jw * w.transpose();

    let t = geo.t;
    let (iz, iz2, iz3) = (1.0 / t.z, 1.0 / (t.z * t.z), 1.0 / (t.z * t.z * t.z));
    let mut d_t = Vector3::zeros();
    d_t.z += -cam.fx * iz2 * g_j[(0, 0)] + 2.0 * cam.fx * t.x * iz3 * g_j[(0, 2)];
    d_t.x += -cam.fx * iz2 * g_j[(0, 2)];
    d_t.z += -cam.fy * iz2 * g_j[(1, 1)] + 2.0 * cam.fy * t.y * iz3 * g_j[(1, 2)];
    d_t.y += -cam.fy * iz2 * g_j[(1, 2)];

    let [dmx, dmy] = grad.mean2d;
    d_t.x += cam.fx * iz * dmx;
    d_t.y += cam.fy * iz * dmy;
    d_t.z += -cam.fx * t.x * iz2 * dmx - cam.fy * t.y * iz2 * dmy;
    d_t.z += grad.depth;

    d_pos += w.transpose() * d_t;
    for i in 0..3 {
        out[POSITION + i] = d_pos[i];
    }

    // Σ = M Mᵀ with M = R S.
    let s = g.scale;
    let m = geo.rot * Matrix3::from_diagonal(&s);
    let g_m = (g_cov3d + g_cov3d.transpose()) * m;
    let mut g_rot = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            g_rot[(i, j)] = g_m[(i, j)] * s[j];
        }
    }
    for j in 0..3 {
        let g_s: f64 = (0..3).map(|i| g_m[(i, j)] * geo.rot[(i, j)]).sum();
        out[LOG_SCALE + j] = g_s * s[j];
    }

    if g.quat_norm > 0.0 {
        let qu = g.rotation;
        let g_qu = rotation_matrix_backward(qu, &g_rot);
        let dot: f64 = (0..4).map(|i| qu[i] * g_qu[i]).sum();
        for i in 0..4 {
            out[ROTATION + i] = (g_qu[i] - qu[i] * dot) / g.quat_norm;
        }
    }
    out
}

/// Project every row of a slice, keeping indices; culled rows are dropped.
pub(crate) fn project_slice(slice: &nalgebra::DMatrix<f64>, cam: &Camera) -> Vec<ScreenGaussian> {
    debug_assert_eq!(slice.ncols(), NUM_PARAMS);
    (0..slice.nrows())
        .filter_map(|i| {
            let raw = row_params(slice, i);
            let mut s = project(&gaussian::activate(&raw), cam)?;
            s.index = i;
            Some(s)
        })
        .collect()
}

pub(crate) fn row_params(slice: &nalgebra::DMatrix<f64>, i: usize) -> GaussianParams {
    let mut r = [0.0; NUM_PARAMS];
    for (k, v) in r.iter_mut().enumerate() {
        *v = slice[(i, k)];
    }
    GaussianParams(r)
}

/// Sort key: camera depth, ties broken by slice row.
pub(crate) fn depth_order(a: &ScreenGaussian, b: &ScreenGaussian) -> std::cmp::Ordering {
    a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index))
}
