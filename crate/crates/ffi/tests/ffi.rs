use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::{DMatrix, Matrix4};
use tugs_core::gaussian::{GaussianParams, NUM_PARAMS};
use tugs_core::io::checkpoint::{save_checkpoint, Checkpoint};
use tugs_core::medium::MediumParams;
use tugs_core::tensor::CpFactors;
use tugs_core::trainer::{forward, MediumMode};
use tugs_core::Camera;
use tugs_ffi::*;

fn sample_checkpoint() -> Checkpoint {
    let a = GaussianParams::new([0.0, 0.0, 0.0], [0.4; 3], [1.0, 0.0, 0.0, 0.0], 0.9, [0.8, 0.3, 0.2]);
    let b = GaussianParams::new([0.3, 0.1, 0.5], [0.2; 3], [1.0, 0.0, 0.0, 0.0], 0.7, [0.1, 0.6, 0.9]);
    let template = DMatrix::from_fn(NUM_PARAMS, 2, |k, r| if r == 0 { a.0[k] } else { b.0[k] });
    let number = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let medium = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.2, 0.1]);
    Checkpoint {
        factors: CpFactors::new(medium, number, template).unwrap(),
        medium: MediumParams { gamma_inf: [0.1, 0.2, 0.3], conv_w: [0.5, 0.75, 1.0], conv_b: [0.0; 3] },
    }
}

fn write_sample(dir: &Path) -> PathBuf {
    let path = dir.join("m.tugs");
    save_checkpoint(&path, &sample_checkpoint()).unwrap();
    path
}

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn camera() -> TugsCamera {
    let pose = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0, 0.0, 0.0, 1.0];
    TugsCamera { width: 16, height: 12, fx: 20.0, fy: 20.0, cx: 8.0, cy: 6.0, world_to_camera: pose }
}

fn last_error() -> String {
    let p = tugs_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn compression_stats_matches_core() {
    let mut s = TugsCompressionStats::default();
    assert_eq!(unsafe { tugs_compression_stats(200_000, 59, 20, &mut s) }, TugsStatus::Ok);
    assert_eq!(s.compressed_params, 4_001_220);
    assert_eq!(s.dense_params, 11_800_000);
    assert!((s.reduction_fraction - 0.661).abs() < 1e-3);
    assert_eq!(unsafe { tugs_compression_stats(1, 1, 1, std::ptr::null_mut()) }, TugsStatus::NullPointer);
}

#[test]
fn load_info_render_free() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&write_sample(dir.path()));
    let mut model = std::ptr::null_mut();
    assert_eq!(unsafe { tugs_model_load(path.as_ptr(), &mut model) }, TugsStatus::Ok);
    assert!(!model.is_null());

    let mut info = TugsModelInfo::default();
    assert_eq!(unsafe { tugs_model_info(model, &mut info) }, TugsStatus::Ok);
    assert_eq!((info.num_gaussians, info.num_attributes, info.rank), (2, 59, 2));
    assert_eq!(info.parameter_count, (2 + 2 + 59) * 2 + 9);
    assert_eq!(info.gamma_inf, [0.1f32 as f64, 0.2f32 as f64, 0.3f32 as f64]);

    let ck = tugs_core::io::checkpoint::load_checkpoint(Path::new(path.to_str().unwrap())).unwrap();
    let c = camera();
    let cam = Camera::new(16, 12, 20.0, 20.0, 8.0, 6.0, Matrix4::from_fn(|i, j| c.world_to_camera[4 * i + j])).unwrap();
    let reference = forward(&ck.factors, &ck.medium, &cam, MediumMode::Underwater).unwrap();
    let mut buf = vec![0f32; 16 * 12 * 3];
    for (kind, expected) in [
        (TugsImageKind::Composed, &reference.composed),
        (TugsImageKind::Restored, &reference.object.color),
        (TugsImageKind::Backscatter, &reference.backscatter),
    ] {
        assert_eq!(unsafe { tugs_model_render(model, &c, kind, buf.as_mut_ptr(), buf.len()) }, TugsStatus::Ok);
        for (a, b) in buf.iter().zip(expected.data()) {
            assert_eq!(*a, *b as f32);
        }
    }
    assert_eq!(
        unsafe { tugs_model_render(model, &c, TugsImageKind::Attenuation, buf.as_mut_ptr(), buf.len()) },
        TugsStatus::Ok
    );
    assert!(buf.iter().all(|v| (0.0..=1.0).contains(v)));

    let copy = cstr(&dir.path().join("copy.tugs"));
    assert_eq!(unsafe { tugs_model_save(model, copy.as_ptr()) }, TugsStatus::Ok);
    assert_eq!(std::fs::read(dir.path().join("copy.tugs")).unwrap(), std::fs::read(dir.path().join("m.tugs")).unwrap());
    unsafe { tugs_model_free(model) };
}

#[test]
fn errors_set_status_and_message() {
    let mut model = std::ptr::null_mut();
    let missing = CString::new("/nonexistent/dir/m.tugs").unwrap();
    assert_eq!(unsafe { tugs_model_load(missing.as_ptr(), &mut model) }, TugsStatus::Io);
    assert!(model.is_null());
    assert!(last_error().contains("/nonexistent/dir/m.tugs"));

    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("junk.tugs");
    std::fs::write(&junk, b"NOPE").unwrap();
    let junk = cstr(&junk);
    assert_eq!(unsafe { tugs_model_load(junk.as_ptr(), &mut model) }, TugsStatus::Io);
    assert!(last_error().contains("magic"));

    assert_eq!(unsafe { tugs_model_load(std::ptr::null(), &mut model) }, TugsStatus::NullPointer);
    let mut info = TugsModelInfo::default();
    assert_eq!(unsafe { tugs_model_info(std::ptr::null(), &mut info) }, TugsStatus::NullPointer);
    assert!(last_error().contains("model"));
    unsafe { tugs_model_free(std::ptr::null_mut()) };
}

#[test]
fn render_validates_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = cstr(&write_sample(dir.path()));
    let mut model = std::ptr::null_mut();
    assert_eq!(unsafe { tugs_model_load(path.as_ptr(), &mut model) }, TugsStatus::Ok);
    let mut buf = vec![0f32; 16 * 12 * 3];
    let c = camera();
    let st = unsafe { tugs_model_render(model, &c, TugsImageKind::Composed, buf.as_mut_ptr(), 10) };
    assert_eq!(st, TugsStatus::BufferTooSmall);
    let mut skew = camera();
    skew.world_to_camera[1] = 0.5;
    let st = unsafe { tugs_model_render(model, &skew, TugsImageKind::Composed, buf.as_mut_ptr(), buf.len()) };
    assert_eq!(st, TugsStatus::InvalidArgument);
    assert!(last_error().contains("orthonormal"));
    let st = unsafe { tugs_model_render(model, &c, TugsImageKind::Composed, std::ptr::null_mut(), buf.len()) };
    assert_eq!(st, TugsStatus::NullPointer);
    unsafe { tugs_model_free(model) };
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(tugs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

/// Compiles and runs a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/tugs.h");
    assert!(header.exists(), "cbindgen header missing");
    let lib = target_dir().join("libtugs_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if Command::new(&cc).arg("--version").output().is_err() || !lib.exists() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let model = write_sample(dir.path());
    let out = Command::new(&exe).arg(&model).output().unwrap();
    assert!(out.status.success(), "smoke exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("2 2 "), "{text}");
}
