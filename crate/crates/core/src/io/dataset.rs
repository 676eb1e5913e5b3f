//! Posed image datasets on disk.
//!
//! ```text
//! <dir>/cameras.json
//! <dir>/points.ply
//! <dir>/images/*.png
//! <dir>/medium.json        (synthetic scenes only)
//! ```
//!
//! `cameras.json`:
//!
//! ```json
//! {
//!   "views": [
//!     { "image": "images/000.png", "width": 64, "height": 64,
//!       "fx": 102.4, "fy": 102.4, "cx": 32.0, "cy": 32.0,
//!       "world_to_camera": [[1,0,0,0],[0,1,0,0],[0,0,1,3],[0,0,0,1]] }
//!   ],
//!   "train": [0],
//!   "eval": []
//! }
//! ```
//!
//! `world_to_camera` is row-major with an OpenCV camera frame (+x right,
//! +y down, +z forward). Without `train`/`eval`, every view trains.

use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::synth::{MediumTruth, SyntheticScene};
use crate::trainer::{Point, View};

use super::ply::{encode_ply, read_ply};
use super::png::{encode_png16, read_png};
use super::write_atomic;

pub const CAMERAS_FILE: &str = "cameras.json";
pub const POINTS_FILE: &str = "points.ply";
pub const MEDIUM_FILE: &str = "medium.json";
pub const POSE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub world_to_camera: [[f64; 4]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamerasFile {
    pub views: Vec<CameraRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<Vec<usize>>,
}

impl CameraRecord {
    pub fn from_camera(cam: &Camera, image: String) -> Self {
        let m = &cam.world_to_camera;
        let pose = [0, 1, 2, 3].map(|i| [0, 1, 2, 3].map(|j| m[(i, j)]));
        Self { image, width: cam.width, height: cam.height, fx: cam.fx, fy: cam.fy, cx: cam.cx, cy: cam.cy, world_to_camera: pose }
    }

    pub fn to_camera(&self) -> Result<Camera> {
        let p = &self.world_to_camera;
        let m = Matrix4::from_fn(|i, j| p[i][j]);
        let cam = Camera { width: self.width, height: self.height, fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, world_to_camera: m, near: Camera::DEFAULT_NEAR };
        cam.validate(POSE_TOLERANCE)?;
        Ok(cam)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub views: Vec<View>,
    /// Image path of every view, relative to `root`.
    pub image_paths: Vec<String>,
    pub points: Vec<Point>,
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl Dataset {
    pub fn train_views(&self) -> Vec<View> {
        self.train.iter().map(|&i| self.views[i].clone()).collect()
    }

    pub fn eval_views(&self) -> Vec<View> {
        self.eval.iter().map(|&i| self.views[i].clone()).collect()
    }

    /// Views of a named split: `train`, `eval` or `all`.
    pub fn split(&self, name: &str) -> Result<Vec<View>> {
        match name {
            "train" => Ok(self.train_views()),
            "eval" => Ok(self.eval_views()),
            "all" => Ok(self.views.clone()),
            other => Err(Error::invalid(format!("unknown split {other:?} (expected train, eval or all)"))),
        }
    }
}

pub fn read_cameras(path: &Path) -> Result<CamerasFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, format!("invalid JSON: {e}")))
}

fn check_split(path: &Path, name: &str, idx: &[usize], n: usize) -> Result<()> {
    if let Some(bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::load(path, format!("{name}: view index {bad} out of range for {n} views")));
    }
    Ok(())
}

/// Cameras and images only; used by tools that take a camera list.
pub fn load_cameras(path: &Path) -> Result<Vec<Camera>> {
    let file = read_cameras(path)?;
    file.views
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_camera().map_err(|e| Error::load(path, format!("views[{i}]: {e}"))))
        .collect()
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let cam_path = dir.join(CAMERAS_FILE);
    let file = read_cameras(&cam_path)?;
    if file.views.is_empty() {
        return Err(Error::load(&cam_path, "views: no cameras"));
    }
    let mut views = Vec::with_capacity(file.views.len());
    for (i, rec) in file.views.iter().enumerate() {
        let camera = rec.to_camera().map_err(|e| Error::load(&cam_path, format!("views[{i}]: {e}")))?;
        let img_path = dir.join(&rec.image);
        let image = read_png(&img_path)?;
        if (image.width(), image.height()) != (rec.width, rec.height) {
            return Err(Error::load(
                &img_path,
                format!("image is {}×{}, camera views[{i}] expects {}×{}", image.width(), image.height(), rec.width, rec.height),
            ));
        }
        views.push(View { camera, image });
    }
    let n = views.len();
    let train = file.train.clone().unwrap_or_else(|| (0..n).collect());
    let eval = file.eval.clone().unwrap_or_default();
    check_split(&cam_path, "train", &train, n)?;
    check_split(&cam_path, "eval", &eval, n)?;
    let points = read_ply(&dir.join(POINTS_FILE))?;
    Ok(Dataset {
        root: dir.to_path_buf(),
        image_paths: file.views.iter().map(|r| r.image.clone()).collect(),
        views,
        points,
        train,
        eval,
    })
}

/// Write views as 16-bit PNGs plus `cameras.json` and `points.ply`.
pub fn write_dataset(dir: &Path, views: &[View], points: &[Point], train: &[usize], eval: &[usize]) -> Result<()> {
    std::fs::create_dir_all(dir.join("images"))?;
    let mut records = Vec::with_capacity(views.len());
    for (i, v) in views.iter().enumerate() {
        let name = format!("images/{i:03}.png");
        write_atomic(&dir.join(&name), &encode_png16(&v.image)?)?;
        records.push(CameraRecord::from_camera(&v.camera, name));
    }
    let file = CamerasFile { views: records, train: Some(train.to_vec()), eval: Some(eval.to_vec()) };
    write_atomic(&dir.join(CAMERAS_FILE), serde_json::to_string_pretty(&file)?.as_bytes())?;
    write_atomic(&dir.join(POINTS_FILE), &encode_ply(points))
}

pub fn write_synthetic(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    write_dataset(dir, &scene.views, &scene.points, &scene.train, &scene.eval)?;
    write_atomic(&dir.join(MEDIUM_FILE), serde_json::to_string_pretty(&scene.truth)?.as_bytes())
}

pub fn read_medium_truth(path: &Path) -> Result<MediumTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::load(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| Error::load(path, format!("invalid JSON: {e}")))
}
