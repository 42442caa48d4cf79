//! SE(3), pinhole and line geometry shared by every other module.
//!
//! All values are immutable; every operation is a pure function.

mod camera;
mod line;
mod pose;

pub use camera::CameraIntrinsics;
pub use line::{OrthonormalLine, PluckerLine};
pub use pose::{Pose, skew};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-positive depth {0}")]
    NonPositiveDepth(f64),
    #[error("degenerate line: {0}")]
    DegenerateLine(&'static str),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("degenerate point configuration for rigid alignment")]
    DegenerateAlignment,
}

/// Least-squares rigid transform `(R, t)` minimizing `sum |R src_i + t - dst_i|^2`
/// (Kabsch, no scale). Needs at least 3 non-collinear pairs for a unique
/// rotation; with fewer the returned rotation is one of the minimizers.
pub fn rigid_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Result<Pose, GeometryError> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(GeometryError::DegenerateAlignment);
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (d - cd) * (s - cs).transpose();
    }
    if !h.iter().all(|v| v.is_finite()) {
        return Err(GeometryError::DegenerateAlignment);
    }
    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(GeometryError::DegenerateAlignment),
    };
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    Ok(Pose::from_rotation_matrix(&r, cd - r * cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn rigid_align_recovers_transform() {
        let pose = Pose::new(UnitQuaternion::from_euler_angles(0.3, -0.2, 1.1), Vector3::new(1.0, -2.0, 0.5));
        let src: Vec<_> = (0..10)
            .map(|i| {
                let f = i as f64;
                Vector3::new(f.sin() * 2.0, (0.7 * f).cos(), 0.3 * f)
            })
            .collect();
        let dst: Vec<_> = src.iter().map(|p| pose.transform_point(p)).collect();
        let est = rigid_align(&src, &dst).unwrap();
        assert!((est.rotation_matrix() - pose.rotation_matrix()).abs().max() < 1e-12);
        assert!((est.translation() - pose.translation()).norm() < 1e-12);
    }

    #[test]
    fn rigid_align_rejects_mismatch() {
        assert!(rigid_align(&[Vector3::zeros()], &[]).is_err());
    }
}
