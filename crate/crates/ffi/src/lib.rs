//! C ABI over `tugs-core`: load checkpoints, query them and render views.
//!
//! Every fallible function returns a [`TugsStatus`]; on failure the message
//! is available from [`tugs_last_error`] on the same thread. Models are
//! opaque handles released with [`tugs_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Matrix4;
use tugs_core::io::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use tugs_core::medium::attenuation_map;
use tugs_core::tensor::compression_stats;
use tugs_core::trainer::{forward, MediumMode, MEDIUM_PARAMS};
use tugs_core::{Camera, Error};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TugsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Which image [`tugs_model_render`] produces.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TugsImageKind {
    /// Underwater image with attenuation and backscatter.
    Composed = 0,
    /// Medium-free object image.
    Restored = 1,
    Backscatter = 2,
    /// Per-channel transmission of the direct signal.
    Attenuation = 3,
}

/// Pinhole camera; `world_to_camera` is a row-major 4×4 rigid transform in
/// an OpenCV frame (+x right, +y down, +z forward).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TugsCamera {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [f64; 16],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TugsModelInfo {
    pub num_gaussians: u64,
    pub num_attributes: u64,
    pub rank: u64,
    /// Factor entries plus the medium parameters.
    pub parameter_count: u64,
    pub gamma_inf: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TugsCompressionStats {
    pub dense_params: u64,
    pub compressed_params: u64,
    pub reduction_fraction: f64,
}

/// Opaque model handle.
pub struct TugsModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TugsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidArgument(_) | Error::Config { .. } | Error::Diverged { .. } => TugsStatus::InvalidArgument,
            Error::Load { .. } | Error::Io(_) => TugsStatus::Io,
            Error::Format(_) | Error::Image(_) | Error::Json(_) => TugsStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TugsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TugsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            TugsStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TugsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(TugsStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

unsafe fn model_arg<'a>(m: *const TugsModel) -> Result<&'a TugsModel, Failure> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn camera_from(c: &TugsCamera) -> Result<Camera, Failure> {
    let m = Matrix4::from_fn(|i, j| c.world_to_camera[4 * i + j]);
    Ok(Camera::new(c.width as usize, c.height as usize, c.fx, c.fy, c.cx, c.cy, m)?)
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tugs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tugs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parameter counts for `n` Gaussians with `m` attributes at rank `rank`.
///
/// # Safety
/// `out` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tugs_compression_stats(n: u64, m: u64, rank: u64, out: *mut TugsCompressionStats) -> TugsStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = compression_stats(n, m, rank);
        *out = TugsCompressionStats {
            dense_params: s.dense_params,
            compressed_params: s.compressed_params,
            reduction_fraction: s.reduction_fraction,
        };
        Ok(())
    })
}

/// Load a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tugs_model_load(path: *const c_char, out: *mut *mut TugsModel) -> TugsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let checkpoint = load_checkpoint(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TugsModel { checkpoint }));
        Ok(())
    })
}

/// Write the model to `path` atomically.
///
/// # Safety
/// `model` must come from [`tugs_model_load`]; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tugs_model_save(model: *const TugsModel, path: *const c_char) -> TugsStatus {
    guard(|| {
        let m = model_arg(model)?;
        save_checkpoint(path_arg(path)?, &m.checkpoint)?;
        Ok(())
    })
}

/// Release a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`tugs_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tugs_model_free(model: *mut TugsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tugs_model_info(model: *const TugsModel, out: *mut TugsModelInfo) -> TugsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let f = &m.checkpoint.factors;
        *out = TugsModelInfo {
            num_gaussians: f.num_gaussians() as u64,
            num_attributes: f.num_attributes() as u64,
            rank: f.rank() as u64,
            parameter_count: (f.parameter_count() + MEDIUM_PARAMS) as u64,
            gamma_inf: m.checkpoint.medium.gamma_inf,
        };
        Ok(())
    })
}

/// Render `kind` for `camera` into `rgb`, an interleaved row-major buffer of
/// at least `width * height * 3` floats.
///
/// # Safety
/// `model` must be a live handle, `camera` valid, and `rgb` writable for
/// `len` floats.
#[no_mangle]
pub unsafe extern "C" fn tugs_model_render(
    model: *const TugsModel,
    camera: *const TugsCamera,
    kind: TugsImageKind,
    rgb: *mut f32,
    len: usize,
) -> TugsStatus {
    guard(|| {
        let m = model_arg(model)?;
        let cam = camera_from(camera.as_ref().ok_or_else(|| null("camera"))?)?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        let need = cam.width * cam.height * 3;
        if len < need {
            return Err(Failure(TugsStatus::BufferTooSmall, format!("buffer holds {len} floats, {need} needed")));
        }
        let ck = &m.checkpoint;
        let f = forward(&ck.factors, &ck.medium, &cam, MediumMode::Underwater)?;
        let img = match kind {
            TugsImageKind::Composed => f.composed,
            TugsImageKind::Restored => f.object.color,
            TugsImageKind::Backscatter => f.backscatter,
            TugsImageKind::Attenuation => attenuation_map(&f.medium.color, &f.medium.depth)?,
        };
        let out = std::slice::from_raw_parts_mut(rgb, need);
        for (o, v) in out.iter_mut().zip(img.data()) {
            *o = *v as f32;
        }
        Ok(())
    })
}
