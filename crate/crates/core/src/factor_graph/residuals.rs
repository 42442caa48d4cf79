use nalgebra::{Matrix2x3, Matrix3, SMatrix, Vector2, Vector3};

use super::FactorError;
use crate::geometry::{CameraIntrinsics, OrthonormalLine, PluckerLine, Pose, skew};

/// Below this `sqrt(l0^2 + l1^2)` (relative to `|l|`) the projected line is
/// treated as degenerate: the 3D line passes through the camera center.
const DEGENERATE_LINE_RATIO: f64 = 1e-12;

pub type PoseJacobian = SMatrix<f64, 2, 6>;

/// `r = u - pi(T P_w)`.
pub fn point_residual(u: &Vector2<f64>, p_w: &Vector3<f64>, pose: &Pose, k: &CameraIntrinsics) -> Result<Vector2<f64>, FactorError> {
    let pc = pose.transform_point(p_w);
    if !(pc.z > 0.0) {
        return Err(FactorError::BehindCamera);
    }
    Ok(u - k.project_unchecked(&pc))
}

fn projection_jacobian(pc: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / pc.z;
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz, 0.0, k.fy * iz, -k.fy * pc.y * iz * iz)
}

/// Residual plus Jacobians with respect to the left pose increment
/// `(omega, v)` and the world point.
pub fn point_jacobians(
    u: &Vector2<f64>,
    p_w: &Vector3<f64>,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, PoseJacobian, Matrix2x3<f64>), FactorError> {
    let pc = pose.transform_point(p_w);
    if !(pc.z > 0.0) {
        return Err(FactorError::BehindCamera);
    }
    let jp = projection_jacobian(&pc, k);
    let mut dpc = SMatrix::<f64, 3, 6>::zeros();
    dpc.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&pc)));
    dpc.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    let j_pose = -(jp * dpc);
    let j_point = -(jp * pose.rotation_matrix());
    Ok((u - k.project_unchecked(&pc), j_pose, j_point))
}

fn check_image_line(l: Vector3<f64>) -> Result<Vector3<f64>, FactorError> {
    let rho = l.x.hypot(l.y);
    if !(rho > DEGENERATE_LINE_RATIO * l.norm()) || !rho.is_finite() {
        return Err(FactorError::DegenerateProjection);
    }
    Ok(l)
}

/// Homogeneous image line of a world line, `K_L n_c`, scaled to unit
/// Euclidean norm.
pub fn project_line(line: &PluckerLine, pose: &Pose, k: &CameraIntrinsics) -> Result<Vector3<f64>, FactorError> {
    let l = check_image_line(k.line_matrix() * line.transform(pose).moment)?;
    Ok(l / l.norm())
}

/// Same image line built from two projected points of the line: the cross
/// product of their homogeneous pixels `K P`, scaled to unit norm.
pub fn project_line_from_points(line: &PluckerLine, pose: &Pose, k: &CameraIntrinsics) -> Result<Vector3<f64>, FactorError> {
    let a = line.closest_point_to_origin();
    let b = a + line.direction;
    let km = k.matrix();
    let l = check_image_line((km * pose.transform_point(&a)).cross(&(km * pose.transform_point(&b))))?;
    Ok(l / l.norm())
}

fn endpoint_distance(u: &Vector2<f64>, l: &Vector3<f64>, rho: f64) -> f64 {
    (u.x * l.x + u.y * l.y + l.z) / rho
}

/// Signed distances of the two measured endpoints from the re-projected line.
pub fn line_residual(
    start: &Vector2<f64>,
    end: &Vector2<f64>,
    line: &PluckerLine,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<Vector2<f64>, FactorError> {
    let l = check_image_line(k.line_matrix() * line.transform(pose).moment)?;
    let rho = l.x.hypot(l.y);
    Ok(Vector2::new(endpoint_distance(start, &l, rho), endpoint_distance(end, &l, rho)))
}

/// Residual plus Jacobians with respect to the left pose increment and the
/// four-parameter orthonormal increment of the line. The line is taken from
/// `ortho` so that its scale matches the increment's parameterization.
pub fn line_jacobians(
    start: &Vector2<f64>,
    end: &Vector2<f64>,
    ortho: &OrthonormalLine,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<(Vector2<f64>, PoseJacobian, SMatrix<f64, 2, 4>), FactorError> {
    let lc = ortho.to_plucker().transform(pose);
    let kl = k.line_matrix();
    let l = check_image_line(kl * lc.moment)?;
    let rho2 = l.x * l.x + l.y * l.y;
    let rho = rho2.sqrt();

    let mut de_dl = SMatrix::<f64, 2, 3>::zeros();
    let mut r = Vector2::zeros();
    for (i, u) in [start, end].into_iter().enumerate() {
        let s = u.x * l.x + u.y * l.y + l.z;
        r[i] = s / rho;
        let rho3 = rho2 * rho;
        de_dl[(i, 0)] = u.x / rho - s * l.x / rho3;
        de_dl[(i, 1)] = u.y / rho - s * l.y / rho3;
        de_dl[(i, 2)] = 1.0 / rho;
    }
    let de_dn = de_dl * kl;

    let mut dn_dpose = SMatrix::<f64, 3, 6>::zeros();
    dn_dpose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&lc.moment)));
    dn_dpose.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&lc.direction)));

    let rot = pose.rotation_matrix();
    let mut dn_dworld = SMatrix::<f64, 3, 6>::zeros();
    dn_dworld.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
    dn_dworld.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&pose.translation()) * rot));

    Ok((r, de_dn * dn_dpose, de_dn * dn_dworld * ortho.plucker_jacobian()))
}
