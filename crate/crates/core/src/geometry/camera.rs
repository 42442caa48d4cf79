use nalgebra::{Matrix3, Vector2, Vector3};

use super::GeometryError;

/// Pinhole intrinsics without distortion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Checks `fx, fy > 0` and that the principal point lies strictly inside the image.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsics("focal lengths must be positive and finite"));
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Maps a camera-frame line moment to its homogeneous image line (cofactor of `K`).
    pub fn line_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fy,
            0.0,
            0.0,
            0.0,
            self.fx,
            0.0,
            -self.fy * self.cx,
            -self.fx * self.cy,
            self.fx * self.fy,
        )
    }

    /// Half-open containment test `[0, width) x [0, height)`.
    pub fn contains(&self, u: &Vector2<f64>) -> bool {
        u.x >= 0.0 && u.y >= 0.0 && u.x < self.width as f64 && u.y < self.height as f64
    }

    pub fn project(&self, p_cam: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        if !(p_cam.z > 0.0) {
            return Err(GeometryError::NonPositiveDepth(p_cam.z));
        }
        Ok(self.project_unchecked(p_cam))
    }

    #[inline]
    pub(crate) fn project_unchecked(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn backproject(&self, u: &Vector2<f64>, depth: f64) -> Result<Vector3<f64>, GeometryError> {
        if !(depth > 0.0) {
            return Err(GeometryError::NonPositiveDepth(depth));
        }
        Ok(Vector3::new(
            (u.x - self.cx) / self.fx * depth,
            (u.y - self.cy) / self.fy * depth,
            depth,
        ))
    }
}
