use nalgebra::{Matrix2, Matrix3, Rotation3, SMatrix, Vector3, Vector4};

use super::{GeometryError, Pose, skew};

/// Plücker coordinates `(n, d)` of a 3D line: moment `n = Ps x Pe` and
/// direction `d = Pe - Ps`. Valid iff `n . d = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerLine {
    pub moment: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl PluckerLine {
    pub fn new(moment: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self { moment, direction }
    }

    pub fn from_endpoints(start: &Vector3<f64>, end: &Vector3<f64>) -> Result<Self, GeometryError> {
        let direction = end - start;
        if !(direction.norm() > 0.0) {
            return Err(GeometryError::DegenerateLine("coincident endpoints"));
        }
        Ok(Self { moment: start.cross(end), direction })
    }

    /// Signed value of the Plücker constraint `n . d`.
    pub fn constraint(&self) -> f64 {
        self.moment.dot(&self.direction)
    }

    /// `|n . d| <= tol * (|n| |d| + 1)`.
    pub fn satisfies_constraint(&self, tol: f64) -> bool {
        self.constraint().abs() <= tol * (self.moment.norm() * self.direction.norm() + 1.0)
    }

    pub fn is_finite(&self) -> bool {
        self.moment.iter().chain(self.direction.iter()).all(|v| v.is_finite())
    }

    /// Rescaled so that `|d| = 1`.
    pub fn normalized(&self) -> Self {
        let s = self.direction.norm();
        Self { moment: self.moment / s, direction: self.direction / s }
    }

    /// Foot of the perpendicular from the origin.
    pub fn closest_point_to_origin(&self) -> Vector3<f64> {
        self.direction.cross(&self.moment) / self.direction.norm_squared()
    }

    pub fn distance_to_origin(&self) -> f64 {
        self.moment.norm() / self.direction.norm()
    }

    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        let dir = self.direction.normalize();
        let v = p - self.closest_point_to_origin();
        (v - dir * v.dot(&dir)).norm()
    }

    /// `n' = R n + [t]x R d`, `d' = R d`.
    pub fn transform(&self, pose: &Pose) -> Self {
        let rd = pose.rotate(&self.direction);
        Self { moment: pose.rotate(&self.moment) + pose.translation().cross(&rd), direction: rd }
    }

    /// 6x6 matrix mapping world Plücker coordinates to the frame of `pose`.
    pub fn transform_matrix(pose: &Pose) -> SMatrix<f64, 6, 6> {
        let r = pose.rotation_matrix();
        let mut m = SMatrix::<f64, 6, 6>::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&pose.translation()) * r));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m
    }
}

/// Minimal four-parameter line representation `(U, W)` with `U` in SO(3)
/// and `W` in SO(2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrthonormalLine {
    pub u: Matrix3<f64>,
    pub w: Matrix2<f64>,
    /// Set when the source line passes through the origin (`|n| = 0`) and
    /// the first column of `U` was chosen arbitrarily.
    pub degenerate: bool,
}

fn rot2(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

impl OrthonormalLine {
    pub fn from_plucker(line: &PluckerLine) -> Result<Self, GeometryError> {
        let n_norm = line.moment.norm();
        let d_norm = line.direction.norm();
        if !(d_norm > 0.0) || !line.is_finite() {
            return Err(GeometryError::DegenerateLine("zero direction"));
        }
        let u2 = line.direction / d_norm;
        if n_norm <= f64::EPSILON * d_norm {
            // Through the origin: pick a normal from the axis least aligned with d.
            let k = u2.iamin();
            let axis = Vector3::ith(k, 1.0);
            let u1 = u2.cross(&axis).normalize();
            let u3 = u1.cross(&u2);
            return Ok(Self {
                u: Matrix3::from_columns(&[u1, u2, u3]),
                w: Matrix2::new(0.0, -1.0, 1.0, 0.0),
                degenerate: true,
            });
        }
        let u1 = line.moment / n_norm;
        let u3 = line.moment.cross(&line.direction) / (n_norm * d_norm);
        let scale = (n_norm * n_norm + d_norm * d_norm).sqrt();
        Ok(Self {
            u: Matrix3::from_columns(&[u1, u2, u3]),
            w: Matrix2::new(n_norm, -d_norm, d_norm, n_norm) / scale,
            degenerate: false,
        })
    }

    /// `n = w11 * u1`, `d = w21 * u2`.
    pub fn to_plucker(&self) -> PluckerLine {
        PluckerLine { moment: self.u.column(0) * self.w[(0, 0)], direction: self.u.column(1) * self.w[(1, 0)] }
    }

    /// `U <- U Exp(delta[0..3])`, `W <- W Rot2(delta[3])`.
    pub fn update(&self, delta: &Vector4<f64>) -> Self {
        let du = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2]));
        Self { u: self.u * du.matrix(), w: self.w * rot2(delta[3]), degenerate: self.degenerate }
    }

    /// Jacobian of the Plücker coordinates `(n, d)` with respect to the
    /// increment used by [`OrthonormalLine::update`], evaluated at zero.
    pub fn plucker_jacobian(&self) -> SMatrix<f64, 6, 4> {
        let (u1, u2, u3) = (self.u.column(0), self.u.column(1), self.u.column(2));
        let (w1, w2) = (self.w[(0, 0)], self.w[(1, 0)]);
        let mut j = SMatrix::<f64, 6, 4>::zeros();
        j.fixed_view_mut::<3, 1>(0, 1).copy_from(&(-w1 * u3));
        j.fixed_view_mut::<3, 1>(0, 2).copy_from(&(w1 * u2));
        j.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-w2 * u1));
        j.fixed_view_mut::<3, 1>(3, 0).copy_from(&(w2 * u3));
        j.fixed_view_mut::<3, 1>(3, 2).copy_from(&(-w2 * u1));
        j.fixed_view_mut::<3, 1>(3, 3).copy_from(&(w1 * u2));
        j
    }
}
