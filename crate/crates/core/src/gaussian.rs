//! Raw parameter layout of one Gaussian primitive and its geometry.
//!
//! A raw row has [`NUM_PARAMS`] = 59 entries:
//!
//! | offset | len | meaning                                   |
//! |--------|-----|-------------------------------------------|
//! | 0      | 3   | position μ (world units)                   |
//! | 3      | 3   | log-scale                                  |
//! | 6      | 4   | quaternion `(w, x, y, z)`, unnormalized    |
//! | 10     | 1   | opacity logit                              |
//! | 11     | 48  | SH coefficients, `11 + 3·k + c` for basis k, channel c |

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub const POSITION: usize = 0;
pub const LOG_SCALE: usize = 3;
pub const ROTATION: usize = 6;
pub const OPACITY: usize = 10;
pub const SH: usize = 11;
pub const SH_BASIS: usize = 16;
pub const NUM_PARAMS: usize = SH + 3 * SH_BASIS;

const _: () = assert!(NUM_PARAMS == 59);

static DEGENERATE_ROTATIONS: AtomicUsize = AtomicUsize::new(0);

/// Count of activations that hit a near-zero quaternion and fell back to identity.
pub fn degenerate_rotation_count() -> usize {
    DEGENERATE_ROTATIONS.load(Ordering::Relaxed)
}

/// Index of SH coefficient `k` for color channel `c` within a raw row.
#[inline]
pub const fn sh_index(k: usize, c: usize) -> usize {
    SH + 3 * k + c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams(pub [f64; NUM_PARAMS]);

impl GaussianParams {
    pub fn from_slice(raw: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_PARAMS] = raw
            .try_into()
            .map_err(|_| Error::invalid(format!("raw Gaussian row has {} values, expected {NUM_PARAMS}", raw.len())))?;
        Ok(Self(arr))
    }

    /// Raw row from activated values: `scale > 0`, `opacity ∈ (0, 1)`, view-independent color `rgb`.
    pub fn new(position: [f64; 3], scale: [f64; 3], rotation: [f64; 4], opacity: f64, rgb: [f64; 3]) -> Self {
        let mut r = [0.0; NUM_PARAMS];
        for a in 0..3 {
            r[POSITION + a] = position[a];
            r[LOG_SCALE + a] = scale[a].ln();
            r[sh_index(0, a)] = rgb_to_sh_dc(rgb[a]);
        }
        r[ROTATION..ROTATION + 4].copy_from_slice(&rotation);
        r[OPACITY] = logit(opacity);
        Self(r)
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.0[POSITION], self.0[POSITION + 1], self.0[POSITION + 2])
    }

    pub fn log_scale(&self) -> Vector3<f64> {
        Vector3::new(self.0[LOG_SCALE], self.0[LOG_SCALE + 1], self.0[LOG_SCALE + 2])
    }

    pub fn quaternion(&self) -> [f64; 4] {
        [self.0[ROTATION], self.0[ROTATION + 1], self.0[ROTATION + 2], self.0[ROTATION + 3]]
    }

    pub fn opacity_logit(&self) -> f64 {
        self.0[OPACITY]
    }

    pub fn sh(&self) -> [[f64; 3]; SH_BASIS] {
        let mut out = [[0.0; 3]; SH_BASIS];
        for (k, row) in out.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = self.0[sh_index(k, c)];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivatedGaussian {
    pub position: Vector3<f64>,
    pub scale: Vector3<f64>,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub sh: [[f64; 3]; SH_BASIS],
    /// Norm of the raw quaternion, or 0 when it was replaced by identity.
    pub quat_norm: f64,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// exp on scale, normalize on rotation, sigmoid on opacity.
pub fn activate(raw: &GaussianParams) -> ActivatedGaussian {
    let q = raw.quaternion();
    let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (rotation, quat_norm) = if norm < 1e-12 {
        DEGENERATE_ROTATIONS.fetch_add(1, Ordering::Relaxed);
        ([1.0, 0.0, 0.0, 0.0], 0.0)
    } else {
        ([q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm], norm)
    };
    ActivatedGaussian {
        position: raw.position(),
        scale: raw.log_scale().map(f64::exp),
        rotation,
        opacity: sigmoid(raw.opacity_logit()),
        sh: raw.sh(),
        quat_norm,
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pull a gradient on the rotation matrix back to the quaternion components.
pub fn rotation_matrix_backward(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i, j| d_r[(i, j)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

/// `Σ = R S Sᵀ Rᵀ`.
pub fn covariance(scale: &Vector3<f64>, rotation: [f64; 4]) -> Matrix3<f64> {
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(scale);
    m * m.transpose()
}

/// Unnormalized Gaussian `exp(−½ (x−μ)ᵀ Σ⁻¹ (x−μ))`.
pub fn eval_gaussian(x: &Vector3<f64>, mean: &Vector3<f64>, cov: &Matrix3<f64>) -> Result<f64> {
    if x.iter().chain(mean.iter()).chain(cov.iter()).any(|v| !v.is_finite()) {
        return Err(Error::invalid("eval_gaussian: non-finite input"));
    }
    let inv = cov
        .try_inverse()
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .or_else(|| (cov + Matrix3::identity() * 1e-8).try_inverse())
        .ok_or_else(|| Error::invalid("eval_gaussian: covariance not invertible"))?;
    let d = x - mean;
    Ok((-0.5 * d.dot(&(inv * d))).exp())
}

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real SH basis (degrees 0–3) at `d` and its Jacobian with respect to the
/// components of `d` (treated as free variables).
pub fn sh_basis_with_grad(d: &Vector3<f64>) -> ([f64; SH_BASIS], [[f64; 3]; SH_BASIS]) {
    let (x, y, z) = (d.x, d.y, d.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let b = [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ];
    let g = [
        [0.0, 0.0, 0.0],
        [0.0, -SH_C1, 0.0],
        [0.0, 0.0, SH_C1],
        [-SH_C1, 0.0, 0.0],
        [SH_C2[0] * y, SH_C2[0] * x, 0.0],
        [0.0, SH_C2[1] * z, SH_C2[1] * y],
        [-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z],
        [SH_C2[3] * z, 0.0, SH_C2[3] * x],
        [2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0],
        [6.0 * SH_C3[0] * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy), 0.0],
        [SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y],
        [-2.0 * SH_C3[2] * x * y, SH_C3[2] * (4.0 * zz - xx - 3.0 * yy), 8.0 * SH_C3[2] * y * z],
        [-6.0 * SH_C3[3] * x * z, -6.0 * SH_C3[3] * y * z, SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)],
        [SH_C3[4] * (4.0 * zz - 3.0 * xx - yy), -2.0 * SH_C3[4] * x * y, 8.0 * SH_C3[4] * x * z],
        [2.0 * SH_C3[5] * x * z, -2.0 * SH_C3[5] * y * z, SH_C3[5] * (xx - yy)],
        [SH_C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * SH_C3[6] * x * y, 0.0],
    ];
    (b, g)
}

pub fn sh_basis(d: &Vector3<f64>) -> [f64; SH_BASIS] {
    sh_basis_with_grad(d).0
}

/// View-dependent color: `max(Σ_k Y_k(d) c_k + 0.5, 0)` per channel.
pub fn sh_color(sh: &[[f64; 3]; SH_BASIS], view_dir: &Vector3<f64>) -> [f64; 3] {
    let basis = sh_basis(view_dir);
    let mut rgb = [0.5; 3];
    for (k, b) in basis.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += b * sh[k][c];
        }
    }
    rgb.map(|v| v.max(0.0))
}

/// SH DC coefficient reproducing `rgb` under [`sh_color`].
pub fn rgb_to_sh_dc(rgb: f64) -> f64 {
    (rgb - 0.5) / SH_C0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn raw_with(f: impl FnOnce(&mut [f64; NUM_PARAMS])) -> GaussianParams {
        let mut r = [0.0; NUM_PARAMS];
        r[ROTATION] = 1.0;
        f(&mut r);
        GaussianParams(r)
    }

    #[test]
    fn activation_conventions() {
        let g = activate(&raw_with(|_| {}));
        assert_eq!(g.scale, Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(g.opacity, 0.5);
        let g = activate(&raw_with(|r| r[ROTATION] = 2.0));
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_quaternion_falls_back_to_identity() {
        let before = degenerate_rotation_count();
        let g = activate(&raw_with(|r| r[ROTATION] = 0.0));
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(g.quat_norm, 0.0);
        assert!(degenerate_rotation_count() > before);
    }

    #[test]
    fn opacity_offset_is_ten() {
        // The factor-side opacity row must line up with the raw layout.
        assert_eq!(OPACITY, 10);
        assert_eq!(sh_index(15, 2), NUM_PARAMS - 1);
    }

    #[test]
    fn covariance_identity_rotation() {
        let c = covariance(&Vector3::new(1.0, 2.0, 3.0), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(c, Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)));
    }

    #[test]
    fn covariance_quarter_turn_about_z() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let c = covariance(&Vector3::new(1.0, 2.0, 1.0), [h, 0.0, 0.0, h]);
        let expected = Matrix3::from_diagonal(&Vector3::new(4.0, 1.0, 1.0));
        assert!((c - expected).abs().max() < 1e-12);
    }

    #[test]
    fn gaussian_values() {
        let mean = Vector3::new(0.3, -0.2, 1.0);
        let cov = Matrix3::identity();
        assert_eq!(eval_gaussian(&mean, &mean, &cov).unwrap(), 1.0);
        let x = mean + Vector3::new(1.0, 1.0, 0.0);
        assert_abs_diff_eq!(eval_gaussian(&x, &mean, &cov).unwrap(), (-1.0f64).exp(), epsilon = 1e-15);
        let wider = eval_gaussian(&x, &mean, &(cov * 4.0)).unwrap();
        assert!(wider > eval_gaussian(&x, &mean, &cov).unwrap());
        assert!(eval_gaussian(&Vector3::new(f64::NAN, 0.0, 0.0), &mean, &cov).is_err());
    }

    #[test]
    fn singular_covariance_is_regularized() {
        let cov = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
        let v = eval_gaussian(&Vector3::new(0.5, 0.0, 0.0), &Vector3::zeros(), &cov).unwrap();
        assert!(v > 0.0 && v <= 1.0);
    }

    #[test]
    fn sh_dc_and_zero() {
        let dir = Vector3::new(0.0, 0.6, 0.8);
        assert_eq!(sh_color(&[[0.0; 3]; SH_BASIS], &dir), [0.5; 3]);
        let mut sh = [[0.0; 3]; SH_BASIS];
        sh[0] = [0.4, -0.2, 1.0];
        let a = sh_color(&sh, &dir);
        let b = sh_color(&sh, &Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(a, b);
        assert_abs_diff_eq!(a[0], 0.4 * SH_C0 + 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(rgb_to_sh_dc(0.8) * SH_C0 + 0.5, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn odd_bands_flip_sign() {
        let d = Vector3::new(0.36, -0.48, 0.8);
        let p = sh_basis(&d);
        let n = sh_basis(&-d);
        for k in 1..4 {
            assert_abs_diff_eq!(p[k], -n[k], epsilon = 1e-15);
        }
        for k in 4..9 {
            assert_abs_diff_eq!(p[k], n[k], epsilon = 1e-15);
        }
        for k in 9..16 {
            assert_abs_diff_eq!(p[k], -n[k], epsilon = 1e-15);
        }
    }

    #[test]
    fn sh_basis_jacobian_matches_finite_differences() {
        let d = Vector3::new(0.3, -0.7, 0.5);
        let (_, g) = sh_basis_with_grad(&d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut dp = d;
            let mut dm = d;
            dp[axis] += h;
            dm[axis] -= h;
            let (bp, bm) = (sh_basis(&dp), sh_basis(&dm));
            for k in 0..SH_BASIS {
                assert_abs_diff_eq!(g[k][axis], (bp[k] - bm[k]) / (2.0 * h), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let q = [0.7, -0.2, 0.4, 0.3];
        let weights = Matrix3::from_fn(|i, j| (i as f64 + 1.0) * 0.3 - j as f64 * 0.7);
        let f = |q: [f64; 4]| rotation_matrix(q).component_mul(&weights).sum();
        let grad = rotation_matrix_backward(q, &weights);
        let h = 1e-6;
        for i in 0..4 {
            let (mut qp, mut qm) = (q, q);
            qp[i] += h;
            qm[i] -= h;
            assert_abs_diff_eq!(grad[i], (f(qp) - f(qm)) / (2.0 * h), epsilon = 1e-8);
        }
    }

    fn unit_quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter_map("non-degenerate", |q| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            (n > 1e-3).then(|| q.map(|v| v / n))
        })
    }

    proptest! {
        #[test]
        fn activation_is_total(raw in prop::collection::vec(-5.0f64..5.0, NUM_PARAMS)) {
            let g = activate(&GaussianParams::from_slice(&raw).unwrap());
            prop_assert!(g.scale.iter().all(|&s| s > 0.0));
            let n: f64 = g.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-6);
            prop_assert!(g.opacity > 0.0 && g.opacity < 1.0);
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(
            s in prop::array::uniform3(0.05f64..3.0),
            q in unit_quat(),
        ) {
            let c = covariance(&Vector3::from(s), q);
            prop_assert!((c - c.transpose()).abs().max() < 1e-12);
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            let mut sq: Vec<f64> = s.iter().map(|v| v * v).collect();
            eig.sort_by(f64::total_cmp);
            sq.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&sq) {
                prop_assert!((a - b).abs() < 1e-9 * b.max(1.0));
            }
        }

        #[test]
        fn sh_color_is_linear(
            a in prop::collection::vec(-0.02f64..0.02, 48),
            b in prop::collection::vec(-0.02f64..0.02, 48),
            d in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let d = Vector3::from(d);
            prop_assume!(d.norm() > 1e-3);
            let d = d.normalize();
            let pack = |v: &[f64]| {
                let mut sh = [[0.0; 3]; SH_BASIS];
                for k in 0..SH_BASIS { for c in 0..3 { sh[k][c] = v[3 * k + c]; } }
                sh
            };
            // Well inside the unclamped region the offset color is affine.
            let lin = |v: &[f64]| sh_color(&pack(v), &d).map(|x| x - 0.5);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let (la, lb, ls) = (lin(&a), lin(&b), lin(&sum));
            for c in 0..3 {
                prop_assert!((ls[c] - la[c] - lb[c]).abs() < 1e-12);
            }
        }

        #[test]
        fn gaussian_is_rotation_invariant(
            x in prop::array::uniform3(-2.0f64..2.0),
            mu in prop::array::uniform3(-2.0f64..2.0),
            s in prop::array::uniform3(0.2f64..2.0),
            q in unit_quat(),
            q2 in unit_quat(),
        ) {
            let (x, mu) = (Vector3::from(x), Vector3::from(mu));
            let cov = covariance(&Vector3::from(s), q);
            let r = rotation_matrix(q2);
            let a = eval_gaussian(&x, &mu, &cov).unwrap();
            let b = eval_gaussian(&(r * x), &(r * mu), &(r * cov * r.transpose())).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
