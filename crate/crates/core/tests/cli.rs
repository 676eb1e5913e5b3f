use std::path::Path;
use std::process::{Command, Output};

use nalgebra::{DMatrix, Vector3};
use tugs_core::gaussian::{GaussianParams, NUM_PARAMS};
use tugs_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tugs_core::io::dataset::{load_dataset, write_dataset};
use tugs_core::medium::MediumParams;
use tugs_core::metrics::evaluate;
use tugs_core::tensor::CpFactors;
use tugs_core::trainer::{MediumMode, Point, View};
use tugs_core::{Camera, Image};

fn tugs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tugs")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = tugs(&["stats", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(tugs(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(tugs(&[]).status.code(), Some(2));
}

#[test]
fn runtime_failure_exits_one() {
    let out = tugs(&["stats", "--checkpoint", "/nonexistent/model.tugs"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/model.tugs"));
}

#[test]
fn stats_reports_two_thirds_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.tugs");
    let (n, r) = (200_000, 20);
    let factors = CpFactors::new(DMatrix::from_element(2, r, 1.0), DMatrix::from_element(n, r, 0.5), DMatrix::from_element(NUM_PARAMS, r, 0.25))
        .unwrap();
    save_checkpoint(&path, &Checkpoint { factors, medium: MediumParams::clear() }).unwrap();
    let out = tugs(&["stats", "--checkpoint", p(&path)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("compressed params: 4001220"), "{text}");
    assert!(text.contains("dense params:      11800000"), "{text}");
    assert!(text.contains("reduction:         66.1%"), "{text}");
}

/// One object Gaussian in front of the camera; the medium Gaussian is
/// behind it, so attenuation and medium depth vanish and the bias is zero.
fn identity_medium_checkpoint() -> Checkpoint {
    let object = GaussianParams::new([0.0, 0.0, 0.0], [0.3; 3], [1.0, 0.0, 0.0, 0.0], 0.8, [0.9, 0.4, 0.2]);
    let hidden = GaussianParams::new([0.0, 0.0, -10.0], [0.3; 3], [1.0, 0.0, 0.0, 0.0], 0.8, [0.5; 3]);
    let template = DMatrix::from_fn(NUM_PARAMS, 2, |k, r| if r == 0 { object.0[k] } else { hidden.0[k] });
    let factors = CpFactors::new(DMatrix::identity(2, 2), DMatrix::from_element(1, 2, 1.0), template).unwrap();
    Checkpoint { factors, medium: MediumParams { gamma_inf: [0.3; 3], conv_w: [0.5; 3], conv_b: [0.0; 3] } }
}

#[test]
fn restore_equals_render_for_identity_medium() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.tugs");
    save_checkpoint(&ck, &identity_medium_checkpoint()).unwrap();
    let cam = Camera::look_at(24, 20, 30.0, Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0)).unwrap();
    let ds = dir.path().join("ds");
    write_dataset(&ds, &[View { camera: cam, image: Image::zeros(24, 20, 3) }], &[Point { position: [0.0; 3], color: [0.5; 3] }], &[0], &[])
        .unwrap();
    let cams = ds.join("cameras.json");
    let (r, s) = (dir.path().join("r"), dir.path().join("s"));
    assert!(tugs(&["render", "--checkpoint", p(&ck), "--cameras", p(&cams), "--out", p(&r)]).status.success());
    let out = tugs(&["restore", "--checkpoint", p(&ck), "--cameras", p(&cams), "--out", p(&s), "--backscatter", "--attenuation"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rendered = std::fs::read(r.join("render_000.png")).unwrap();
    assert_eq!(rendered, std::fs::read(s.join("restore_000.png")).unwrap());
    let img = tugs_core::io::png::read_png(&r.join("render_000.png")).unwrap();
    assert!(img.data().iter().cloned().fold(0.0, f64::max) > 0.3);
    assert!(s.join("backscatter_000.png").exists() && s.join("attenuation_000.png").exists());
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.cfg");
    std::fs::write(&spec, "n_gaussians = 6\nwidth = 16\nheight = 16\nn_views = 4\neval_views = 1\nmedium = underwater\n").unwrap();
    let ds = dir.path().join("ds");
    let out = tugs(&["synth", "--spec", p(&spec), "--out", p(&ds), "--seed", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ds.join("medium.json").exists());

    let cfg = dir.path().join("train.cfg");
    std::fs::write(&cfg, "steps = 12\nrank = 4\ncheckpoint_interval = 5\ndensify_interval = 5\n").unwrap();
    let run = dir.path().join("run");
    let out = tugs(&["--threads", "1", "train", "--dataset", p(&ds), "--out", p(&run), "--config", p(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("step,dr,ssim,cc,bs,tv,total\n1,"));
    assert!(run.join("checkpoint.tugs").exists());

    let model = run.join("model.tugs");
    let out = tugs(&["eval", "--checkpoint", p(&model), "--dataset", p(&ds)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let mean_line = text.lines().find(|l| l.starts_with("mean")).unwrap();
    let cli_psnr: f64 = mean_line.split_whitespace().nth(1).unwrap().parse().unwrap();
    let ck = load_checkpoint(&model).unwrap();
    let data = load_dataset(&ds).unwrap();
    let lib = evaluate(&ck.factors, &ck.medium, &data.eval_views(), MediumMode::Underwater).unwrap();
    assert!((cli_psnr - lib.mean_psnr).abs() < 0.01, "{cli_psnr} vs {}", lib.mean_psnr);
    let bytes = std::fs::metadata(&model).unwrap().len();
    assert!(text.contains(&format!("storage: {bytes} bytes")));

    // Same seed, same bytes.
    let again = dir.path().join("again");
    assert!(tugs(&["--threads", "1", "train", "--dataset", p(&ds), "--out", p(&again), "--config", p(&cfg)]).status.success());
    assert_eq!(std::fs::read(&model).unwrap(), std::fs::read(again.join("model.tugs")).unwrap());
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("scene.cfg");
    std::fs::write(&spec, "n_gaussians = 4\nwidth = 8\nheight = 8\nn_views = 2\neval_views = 1\n").unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(tugs(&["synth", "--spec", p(&spec), "--out", p(&a)]).status.success());
    assert!(tugs(&["synth", "--spec", p(&spec), "--out", p(&b)]).status.success());
    for f in ["cameras.json", "points.ply", "medium.json", "images/000.png", "images/001.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
