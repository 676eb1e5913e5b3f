use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with an OpenCV-style frame: +x right, +y down, +z forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Rigid world-to-camera transform.
    pub world_to_camera: Matrix4<f64>,
    pub near: f64,
}

impl Camera {
    pub const DEFAULT_NEAR: f64 = 0.01;

    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        world_to_camera: Matrix4<f64>,
    ) -> Result<Self> {
        let cam = Self { width, height, fx, fy, cx, cy, world_to_camera, near: Self::DEFAULT_NEAR };
        cam.validate(1e-6)?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::invalid("eye equals target"))?;
        let right = forward.cross(&up).try_normalize(1e-12).ok_or_else(|| Error::invalid("up parallel to view"))?;
        let down = forward.cross(&right);
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(rot * eye);
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self::new(width, height, focal, focal, width as f64 / 2.0, height as f64 / 2.0, m)
    }

    pub fn validate(&self, ortho_tol: f64) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera has zero-sized frame"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if !(self.near > 0.0) {
            return Err(Error::invalid("near plane must be positive"));
        }
        if self.world_to_camera.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose contains non-finite values"));
        }
        let r = self.rotation();
        let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
        if dev > ortho_tol || r.determinant() < 0.0 {
            return Err(Error::invalid(format!("pose rotation is not orthonormal (deviation {dev:.3e})")));
        }
        let last = self.world_to_camera.row(3);
        if (last[0], last[1], last[2], last[3]) != (0.0, 0.0, 0.0, 1.0) {
            return Err(Error::invalid("pose bottom row must be [0, 0, 0, 1]"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_places_target_on_axis() {
        let cam = Camera::look_at(64, 48, 50.0, Vector3::new(0.0, 0.0, -3.0), Vector3::zeros(), Vector3::new(0.0, -1.0, 0.0))
            .unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert!((p - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
        assert!((cam.center() - Vector3::new(0.0, 0.0, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_skewed_pose() {
        let mut m = Matrix4::identity();
        m[(0, 1)] = 0.1;
        assert!(Camera::new(8, 8, 10.0, 10.0, 4.0, 4.0, m).is_err());
        assert!(Camera::new(8, 8, -1.0, 10.0, 4.0, 4.0, Matrix4::identity()).is_err());
    }
}
