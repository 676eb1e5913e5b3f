use nalgebra::{DMatrix, Matrix4};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::camera::Camera;
use crate::gaussian::{activate, GaussianParams, NUM_PARAMS, OPACITY};
use crate::image::Image;

fn axis_camera(w: usize, h: usize, f: f64) -> Camera {
    Camera::new(w, h, f, f, w as f64 / 2.0, h as f64 / 2.0, Matrix4::identity()).unwrap()
}

fn slice_of(rows: &[GaussianParams]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), NUM_PARAMS);
    for (i, r) in rows.iter().enumerate() {
        for k in 0..NUM_PARAMS {
            m[(i, k)] = r.0[k];
        }
    }
    m
}

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [rng.gen_range(0.3..1.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)]
}

/// Random scene in front of an identity camera, optionally with higher-order SH.
fn random_scene(rng: &mut ChaCha8Rng, n: usize, w: usize, h: usize, max_opacity: f64) -> (DMatrix<f64>, Camera) {
    let f = w.max(h) as f64;
    let cam = axis_camera(w, h, f);
    let rows: Vec<_> = (0..n)
        .map(|_| {
            let z = rng.gen_range(1.0..4.0);
            let pos = [rng.gen_range(-0.6..0.6) * z, rng.gen_range(-0.6..0.6) * z, z];
            let scale = [rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3), rng.gen_range(0.02..0.3)];
            let rgb = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let mut g = GaussianParams::new(pos, scale, random_quat(rng), rng.gen_range(0.01..max_opacity), rgb);
            for v in g.0[crate::gaussian::sh_index(1, 0)..].iter_mut() {
                *v = rng.gen_range(-0.1..0.1);
            }
            g
        })
        .collect();
    (slice_of(&rows), cam)
}

fn max_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn axis_projection() {
    let cam = Camera::new(100, 100, 100.0, 100.0, 50.0, 50.0, Matrix4::identity()).unwrap();
    let g = GaussianParams::new([0.0, 0.0, 1.0], [0.01; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
    let s = project(&activate(&g), &cam).unwrap();
    assert!((s.mean2d[0] - 50.0).abs() < 1e-12 && (s.mean2d[1] - 50.0).abs() < 1e-12);
    assert!((s.depth - 1.0).abs() < 1e-12);
}

#[test]
fn behind_near_plane_is_culled() {
    let cam = axis_camera(32, 32, 32.0);
    for z in [0.005, 0.01, -1.0] {
        let g = GaussianParams::new([0.0, 0.0, z], [0.1; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
        assert!(project(&activate(&g), &cam).is_none(), "z = {z}");
    }
}

#[test]
fn off_frame_is_culled() {
    let cam = axis_camera(32, 32, 32.0);
    let g = GaussianParams::new([50.0, 0.0, 1.0], [0.01; 3], [1.0, 0.0, 0.0, 0.0], 0.5, [0.5; 3]);
    assert!(project(&activate(&g), &cam).is_none());
}

#[test]
fn isotropic_covariance_on_axis() {
    let (f, sigma, z) = (100.0, 0.05, 2.0);
    let cam = Camera::new(100, 100, f, f, 50.0, 50.0, Matrix4::identity()).unwrap();
    let g = GaussianParams::new([0.0, 0.0, z], [sigma; 3], [0.9, 0.1, -0.3, 0.2], 0.5, [0.5; 3]);
    let s = project(&activate(&g), &cam).unwrap();
    let expected = (f * sigma / z).powi(2) + 0.3;
    assert!((s.cov2d[0] - expected).abs() < 1e-9);
    assert!((s.cov2d[2] - expected).abs() < 1e-9);
    assert!(s.cov2d[1].abs() < 1e-9);
}

#[test]
fn empty_slice_is_black() {
    let cam = axis_camera(20, 12, 20.0);
    let out = render(&DMatrix::zeros(0, NUM_PARAMS), &cam);
    assert_eq!(out.color.width(), 20);
    assert_eq!(out.color.height(), 12);
    assert!(out.color.data().iter().chain(out.depth.data()).chain(out.alpha.data()).all(|&v| v == 0.0));
}

#[test]
fn single_opaque_gaussian() {
    let cam = axis_camera(9, 9, 9.0);
    let c = [0.2, 0.6, 0.9];
    let z = 2.0;
    let g = GaussianParams::new([0.0, 0.0, z], [0.5; 3], [1.0, 0.0, 0.0, 0.0], 0.9999, c);
    let out = render(&slice_of(&[g]), &cam);
    // The center pixel of an odd-sized frame sits exactly on the mean.
    for (ch, cv) in c.iter().enumerate() {
        assert!((out.color.get(4, 4, ch) - 0.99 * cv).abs() < 1e-9);
    }
    assert!((out.depth.get(4, 4, 0) - 0.99 * z).abs() < 1e-9);
    assert!((out.alpha.get(4, 4, 0) - 0.99).abs() < 1e-12);
}

#[test]
fn three_overlapping_match_oracle() {
    let cam = axis_camera(8, 8, 8.0);
    let rows = [
        GaussianParams::new([0.0, 0.0, 2.0], [0.4, 0.2, 0.3], [1.0, 0.2, 0.0, 0.1], 0.8, [1.0, 0.0, 0.0]),
        GaussianParams::new([0.2, -0.1, 2.5], [0.3; 3], [0.8, 0.0, 0.4, 0.0], 0.7, [0.0, 1.0, 0.0]),
        GaussianParams::new([-0.2, 0.1, 1.5], [0.2, 0.5, 0.2], [1.0, 0.0, 0.0, 0.5], 0.6, [0.0, 0.0, 1.0]),
    ];
    let s = slice_of(&rows);
    let (a, b) = (render(&s, &cam), render_oracle(&s, &cam));
    assert!(max_diff(&a.color, &b.color) < 1e-6);
    assert!(max_diff(&a.depth, &b.depth) < 1e-6);
    assert!(max_diff(&a.alpha, &b.alpha) < 1e-6);
    assert!(a.alpha.data().iter().any(|&v| v > 0.5));
}

#[test]
fn matches_oracle_on_random_scenes() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=50);
        let w = rng.gen_range(1..=32);
        let h = rng.gen_range(1..=32);
        let (s, cam) = random_scene(&mut rng, n, w, h, 0.999);
        let (a, b) = (render(&s, &cam), render_oracle(&s, &cam));
        assert!(max_diff(&a.color, &b.color) < 1e-6, "seed {seed}");
        assert!(max_diff(&a.depth, &b.depth) < 1e-6, "seed {seed}");
        assert!(max_diff(&a.alpha, &b.alpha) < 1e-6, "seed {seed}");
    }
}

#[test]
fn render_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (s, cam) = random_scene(&mut rng, 40, 48, 40, 0.9);
    let a = render(&s, &cam);
    let b = render(&s, &cam);
    assert_eq!(a, b);
}

#[test]
fn permutation_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (s, cam) = random_scene(&mut rng, 12, 24, 24, 0.95);
    let mut order: Vec<usize> = (0..12).collect();
    order.reverse();
    order.swap(2, 7);
    let p = DMatrix::from_fn(12, NUM_PARAMS, |i, k| s[(order[i], k)]);
    let (a, b) = (render_oracle(&s, &cam), render_oracle(&p, &cam));
    assert!(max_diff(&a.color, &b.color) < 1e-12);
    let (a, b) = (render(&s, &cam), render(&p, &cam));
    assert!(max_diff(&a.color, &b.color) < 1e-12);
}

#[test]
fn zero_opacity_is_black() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut s, cam) = random_scene(&mut rng, 10, 16, 16, 0.9);
    for i in 0..10 {
        s[(i, OPACITY)] = -1e3;
    }
    let out = render_oracle(&s, &cam);
    assert!(out.color.data().iter().all(|&v| v == 0.0));
    let out = render(&s, &cam);
    assert!(out.alpha.data().iter().all(|&v| v == 0.0));
}

#[test]
fn nearer_opaque_dominates() {
    let cam = axis_camera(9, 9, 9.0);
    let near = GaussianParams::new([0.0, 0.0, 1.0], [0.3; 3], [1.0, 0.0, 0.0, 0.0], 0.999, [1.0, 0.0, 0.0]);
    let far = GaussianParams::new([0.0, 0.0, 3.0], [0.9; 3], [1.0, 0.0, 0.0, 0.0], 0.999, [0.0, 0.0, 1.0]);
    for rows in [[near, far], [far, near]] {
        let out = render(&slice_of(&rows), &cam);
        assert!(out.color.get(4, 4, 0) > 0.9);
        assert!(out.color.get(4, 4, 2) < 0.05);
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (s, cam) = random_scene(&mut rng, 6, 16, 16, 0.9);
    let g = render_backward(&s, &cam, &Image::zeros(16, 16, 3), &Image::zeros(16, 16, 1));
    assert!(g.params.iter().all(|&v| v == 0.0));
}

#[test]
fn culled_gaussian_has_zero_gradient_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut s, cam) = random_scene(&mut rng, 4, 12, 12, 0.9);
    s[(2, 2)] = -5.0;
    let dc = Image::filled(12, 12, 3, 1.0);
    let dd = Image::filled(12, 12, 1, 1.0);
    let g = render_backward(&s, &cam, &dc, &dd);
    assert!(!g.visible[2]);
    assert!((0..NUM_PARAMS).all(|k| g.params[(2, k)] == 0.0));
    assert!(g.params.iter().any(|&v| v != 0.0));
}

/// Two broad Gaussians covering the whole frame with moderate opacity, so no
/// pixel sits near the skip threshold, the clamp or the termination cutoff.
fn fd_scene(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Camera) {
    let cam = axis_camera(8, 8, 8.0);
    let rows: Vec<_> = (0..2)
        .map(|_| {
            let z = rng.gen_range(1.5..3.0);
            let pos = [rng.gen_range(-0.1..0.1) * z, rng.gen_range(-0.1..0.1) * z, z];
            let scale = [rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0), rng.gen_range(0.6..1.0)];
            let rgb = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
            let mut g = GaussianParams::new(pos, scale, random_quat(rng), rng.gen_range(0.3..0.8), rgb);
            for v in g.0[crate::gaussian::sh_index(1, 0)..].iter_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
            g
        })
        .collect();
    (slice_of(&rows), cam)
}

#[test]
fn backward_matches_finite_differences() {
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (s, cam) = fd_scene(&mut rng);
        let wc = Image::from_fn(8, 8, 3, |_, _, _| rng.gen_range(-1.0..1.0));
        let wd = Image::from_fn(8, 8, 1, |_, _, _| rng.gen_range(-1.0..1.0));
        let loss = |m: &DMatrix<f64>| {
            let out = render(m, &cam);
            let a: f64 = out.color.data().iter().zip(wc.data()).map(|(x, y)| x * y).sum();
            let b: f64 = out.depth.data().iter().zip(wd.data()).map(|(x, y)| x * y).sum();
            a + b
        };
        let g = render_backward(&s, &cam, &wc, &wd);
        for i in 0..2 {
            for k in 0..NUM_PARAMS {
                let mut p = s.clone();
                p[(i, k)] += h;
                let mut m = s.clone();
                m[(i, k)] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                let a = g.params[(i, k)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                worst = worst.max(rel);
                assert!(rel < 1e-3, "seed {seed} row {i} param {k}: analytic {a} fd {fd}");
            }
        }
    }
    assert!(worst < 1e-3);
}

#[test]
fn screen_gradient_is_exposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (s, cam) = fd_scene(&mut rng);
    let g = render_backward(&s, &cam, &Image::filled(8, 8, 3, 1.0), &Image::zeros(8, 8, 1));
    assert!(g.visible.iter().all(|&v| v));
    assert!(g.mean2d.iter().any(|m| m[0] != 0.0 || m[1] != 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn alpha_bounded_and_monotone(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, cam) = random_scene(&mut rng, n + 1, 16, 16, 0.5);
        let fewer = s.rows(0, n).into_owned();
        let a = render(&fewer, &cam).alpha;
        let b = render(&s, &cam).alpha;
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((0.0..=1.0).contains(y));
            prop_assert!(*y >= *x - 1e-12);
        }
    }

    #[test]
    fn depth_zero_only_where_alpha_zero(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (s, cam) = random_scene(&mut rng, 8, 16, 16, 0.99);
        let out = render(&s, &cam);
        for (d, a) in out.depth.data().iter().zip(out.alpha.data()) {
            prop_assert!(*d >= 0.0);
            prop_assert_eq!(*d == 0.0, *a == 0.0);
        }
    }
}
