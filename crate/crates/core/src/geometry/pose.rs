use std::ops::Mul;

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3, Vector6};

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform `T_{c,w}` mapping world coordinates into the camera frame.
///
/// Stored as a unit quaternion plus translation. The tangent vector used by
/// [`Pose::retract`] is ordered `(rotation, translation)` and is applied on
/// the left: `T <- Exp(delta) * T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose(Isometry3<f64>);

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self(Isometry3::identity())
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self(Isometry3::from_parts(Translation3::from(translation), rotation))
    }

    pub fn from_rotation_matrix(rotation: &Matrix3<f64>, translation: Vector3<f64>) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*rotation);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), translation)
    }

    pub fn from_isometry(iso: Isometry3<f64>) -> Self {
        Self(iso)
    }

    pub fn isometry(&self) -> &Isometry3<f64> {
        &self.0
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.0.rotation.to_rotation_matrix().matrix()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.0.translation.vector
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.0.rotation * p + self.0.translation.vector
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.rotation * v
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self * other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Self {
        Self(self.0 * other.0)
    }

    /// Position of the camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        self.0.inverse_transform_point(&nalgebra::Point3::origin()).coords
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        self.0.rotation.angle()
    }

    /// SE(3) exponential of `delta = (omega, v)`.
    pub fn exp(delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let theta2 = omega.norm_squared();
        let theta = theta2.sqrt();
        let w = skew(&omega);
        let (b, c) = if theta < 1e-8 {
            (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
        } else {
            ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
        };
        let jl = Matrix3::identity() + w * b + w * w * c;
        Self::new(UnitQuaternion::from_scaled_axis(omega), jl * v)
    }

    /// Left-multiplicative on-manifold update `Exp(delta) * self`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        let mut out = Pose::exp(delta).compose(self);
        out.0.rotation.renormalize();
        out
    }

    /// Camera pose looking from `eye` towards `target`, with `up` as the
    /// world up direction. Camera axes: x right, y down, z forward.
    pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Option<Self> {
        let forward = (target - eye).try_normalize(1e-12)?;
        let right = forward.cross(up).try_normalize(1e-12)?;
        let down = forward.cross(&right);
        let r_wc = Matrix3::from_columns(&[right, down, forward]);
        let r_cw = r_wc.transpose();
        Some(Self::from_rotation_matrix(&r_cw, -(r_cw * eye)))
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul<&Pose> for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose_strategy() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-10.0..10.0f64)).prop_map(|(r, t)| {
            Pose::new(UnitQuaternion::from_scaled_axis(Vector3::from(r)), Vector3::from(t))
        })
    }

    fn max_pose_diff(a: &Pose, b: &Pose) -> f64 {
        (a.0.to_homogeneous() - b.0.to_homogeneous()).abs().max()
    }

    #[test]
    fn transform_point_examples() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(Pose::identity().transform_point(&p), p);

        let rz = Pose::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), FRAC_PI_2), Vector3::zeros());
        let q = rz.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((q - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-15);

        let tz = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 5.0));
        assert_eq!(tz.transform_point(&p), Vector3::new(1.0, 2.0, 8.0));
    }

    #[test]
    fn look_at_points_z_axis_at_target() {
        let eye = Vector3::new(1.0, -2.0, 1.5);
        let target = Vector3::new(0.0, 3.0, 0.5);
        let pose = Pose::look_at(&eye, &target, &Vector3::z()).unwrap();
        let pc = pose.transform_point(&target);
        assert!(pc.x.abs() < 1e-12 && pc.y.abs() < 1e-12 && pc.z > 0.0);
        assert!((pose.camera_center() - eye).norm() < 1e-12);
        // world up should appear as "up" (negative y) in the image
        let above = pose.transform_point(&(target + Vector3::z()));
        assert!(above.y < 0.0);
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let d1 = Vector6::new(1e-9, -2e-9, 3e-9, 0.1, 0.2, 0.3);
        let d2 = Vector6::new(1.0000001e-8, 0.0, 0.0, 0.1, 0.2, 0.3);
        let a = Pose::exp(&d1);
        let b = Pose::exp(&d2);
        assert!((a.translation() - Vector3::new(0.1, 0.2, 0.3)).norm() < 1e-8);
        assert!((b.translation() - Vector3::new(0.1, 0.2, 0.3)).norm() < 1e-8);
    }

    proptest! {
        #[test]
        fn inverse_composes_to_identity(t in pose_strategy()) {
            let id = t.inverse().compose(&t);
            prop_assert!(max_pose_diff(&id, &Pose::identity()) < 1e-12);
            let id2 = t.compose(&t.inverse());
            prop_assert!(max_pose_diff(&id2, &Pose::identity()) < 1e-12);
            prop_assert!((t.quaternion().norm() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn composition_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
            let lhs = (a * b) * c;
            let rhs = a * (b * c);
            prop_assert!(max_pose_diff(&lhs, &rhs) < 1e-12);
        }

        #[test]
        fn retract_keeps_unit_quaternion(t in pose_strategy(), d in prop::array::uniform6(-1.0..1.0f64)) {
            let out = t.retract(&Vector6::from_row_slice(&d));
            prop_assert!((out.quaternion().norm() - 1.0).abs() < 1e-12);
        }
    }
}
