//! SE(3) rigid-body transforms and their tangent space.
//!
//! Rotations are stored as unit quaternions and renormalized after every
//! composition. Twists are ordered `(tau, phi)`: translational part first,
//! rotational part (axis-angle, radians) second. Updates are applied on the
//! left, `T' = exp(delta) * T`.

use std::fmt;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Below this rotation angle `exp` switches to its Taylor expansion.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the `V⁻¹` coefficient in `log` uses its series.
const LOG_SERIES_ANGLE: f64 = 1e-3;

/// Element of the Lie algebra se(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    pub tau: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(tau: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { tau, phi }
    }

    pub fn zero() -> Self {
        Self {
            tau: Vector3::zeros(),
            phi: Vector3::zeros(),
        }
    }

    pub fn from_slice(v: &[f64; 6]) -> Self {
        Self {
            tau: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            tau: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.tau.x, self.tau.y, self.tau.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn norm(&self) -> f64 {
        (self.tau.norm_squared() + self.phi.norm_squared()).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            tau: self.tau * s,
            phi: self.phi * s,
        }
    }
}

impl std::ops::Add for Twist {
    type Output = Twist;

    fn add(self, rhs: Twist) -> Twist {
        Twist {
            tau: self.tau + rhs.tau,
            phi: self.phi + rhs.phi,
        }
    }
}

impl std::ops::Sub for Twist {
    type Output = Twist;

    fn sub(self, rhs: Twist) -> Twist {
        Twist {
            tau: self.tau - rhs.tau,
            phi: self.phi - rhs.phi,
        }
    }
}

/// Skew-symmetric matrix with `hat(w) * u == w × u`.
#[inline]
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid-body transform `X ↦ R X + t`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Se3Transform {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl fmt::Debug for Se3Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.rotation.quaternion();
        write!(
            f,
            "Se3Transform(q: [{:.6}, {:.6}, {:.6}, {:.6}], t: [{:.6}, {:.6}, {:.6}])",
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z
        )
    }
}

impl Default for Se3Transform {
    fn default() -> Self {
        Self::identity()
    }
}

impl Se3Transform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a transform from raw `(w, x, y, z)` quaternion components,
    /// normalizing them.
    pub fn from_components(q_wxyz: [f64; 4], t: [f64; 3]) -> Self {
        let q = Quaternion::new(q_wxyz[0], q_wxyz[1], q_wxyz[2], q_wxyz[3]);
        Self {
            rotation: UnitQuaternion::from_quaternion(q),
            translation: Vector3::new(t[0], t[1], t[2]),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: t,
        }
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Quaternion `(w, x, y, z)` followed by translation `(x, y, z)`.
    pub fn to_components(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn compose(&self, rhs: &Se3Transform) -> Se3Transform {
        let q = self.rotation.quaternion() * rhs.rotation.quaternion();
        Se3Transform {
            rotation: UnitQuaternion::new_normalize(q),
            translation: self.rotation * rhs.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Se3Transform {
        let inv = self.rotation.inverse();
        Se3Transform {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    /// Applies the transform to a Euclidean point (homogeneous `w = 1`).
    #[inline]
    pub fn act(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * point + self.translation
    }

    pub fn exp(xi: &Twist) -> Se3Transform {
        let phi = xi.phi;
        let theta_sq = phi.norm_squared();
        let theta = theta_sq.sqrt();

        // Quaternion (cos θ/2, sin(θ/2)/θ · φ) and the left Jacobian V with
        // coefficients a = (1 - cos θ)/θ², b = (θ - sin θ)/θ³.
        let (half_sinc, a, b) = if theta < SMALL_ANGLE {
            (
                0.5 - theta_sq / 48.0,
                0.5 - theta_sq / 24.0,
                1.0 / 6.0 - theta_sq / 120.0,
            )
        } else {
            let half = 0.5 * theta;
            let s = half.sin();
            (
                s / theta,
                2.0 * s * s / theta_sq,
                (theta - theta.sin()) / (theta_sq * theta),
            )
        };
        let w = (0.5 * theta).cos();
        let v = phi * half_sinc;
        let rotation = UnitQuaternion::new_normalize(Quaternion::new(w, v.x, v.y, v.z));

        let k = hat(&phi);
        let left_jacobian = Matrix3::identity() + k * a + k * k * b;
        Se3Transform {
            rotation,
            translation: left_jacobian * xi.tau,
        }
    }

    /// Principal-branch logarithm, `‖phi‖ ≤ π`.
    pub fn log(&self) -> Twist {
        let q = self.rotation.quaternion();
        // q and -q are the same rotation; w ≥ 0 selects angles in [0, π]
        let (w, v) = if q.w < 0.0 {
            (-q.w, -q.imag())
        } else {
            (q.w, q.imag())
        };
        let vn = v.norm();
        let theta = 2.0 * vn.atan2(w);
        let phi = if vn < 1e-12 {
            // atan2 ratio series: θ/|v| = 2/w (1 - |v|²/(3w²) + ...)
            v * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w))
        } else {
            v * (theta / vn)
        };

        let theta_sq = theta * theta;
        // V⁻¹ = I - ½ K + c K², c = (1 - (θ/2) cot(θ/2)) / θ²
        let c = if theta < LOG_SERIES_ANGLE {
            1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq / 30240.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / theta_sq
        };
        let k = hat(&phi);
        let v_inv = Matrix3::identity() - k * 0.5 + k * k * c;
        Twist {
            tau: v_inv * self.translation,
            phi,
        }
    }

    /// Left-multiplicative update `exp(delta) * self`.
    pub fn retract(&self, delta: &Twist) -> Se3Transform {
        if delta.tau == Vector3::zeros() && delta.phi == Vector3::zeros() {
            return *self;
        }
        Se3Transform::exp(delta).compose(self)
    }

    /// Norm of `log(self⁻¹ · other)`, the distance used for group checks.
    pub fn distance(&self, other: &Se3Transform) -> f64 {
        self.inverse().compose(other).log().norm()
    }
}

impl std::ops::Mul for Se3Transform {
    type Output = Se3Transform;

    fn mul(self, rhs: Se3Transform) -> Se3Transform {
        self.compose(&rhs)
    }
}

/// `retract(delta, t)` in free-function form.
pub fn retract(delta: &Twist, t: &Se3Transform) -> Se3Transform {
    t.retract(delta)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;

    fn twist(v: [f64; 6]) -> Twist {
        Twist::from_slice(&v)
    }

    #[test]
    fn exp_zero_is_identity() {
        let t = Se3Transform::exp(&Twist::zero());
        assert_eq!(t.to_components(), Se3Transform::identity().to_components());
    }

    #[test]
    fn exp_pure_translation() {
        let t = Se3Transform::exp(&twist([1.0, 2.0, 3.0, 0.0, 0.0, 0.0]));
        let c = t.to_components();
        assert_eq!(&c[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&c[4..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        // q = (cos π/4, sin π/4, 0, 0); R e_y = e_z
        let t = Se3Transform::exp(&twist([0.0, 0.0, 0.0, FRAC_PI_2, 0.0, 0.0]));
        let c = t.to_components();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((c[0] - h).abs() < 1e-15 && (c[1] - h).abs() < 1e-15);
        let y = t.act(&Vector3::new(0.0, 1.0, 0.0));
        assert!((y - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn log_identity_is_zero() {
        let xi = Se3Transform::identity().log();
        assert_eq!(xi.to_vector(), Vector6::zeros());
    }

    #[test]
    fn log_inverts_exp() {
        let xi = twist([0.1, -0.2, 0.3, 0.01, 0.02, -0.03]);
        let back = Se3Transform::exp(&xi).log();
        assert!((back.to_vector() - xi.to_vector()).amax() < 1e-9);
    }

    #[test]
    fn log_at_half_turn_stays_on_principal_branch() {
        let xi = twist([0.3, 0.1, -0.2, 0.0, std::f64::consts::PI, 0.0]);
        let t = Se3Transform::exp(&xi);
        let back = t.log();
        assert!((back.phi.norm() - std::f64::consts::PI).abs() < 1e-12);
        let again = Se3Transform::exp(&back);
        assert!(t.distance(&again) < 1e-9);
        let p = Vector3::new(0.4, -1.0, 2.0);
        assert!((t.act(&p) - again.act(&p)).norm() < 1e-12);
    }

    #[test]
    fn hat_matches_cross_product() {
        assert_eq!(hat(&Vector3::zeros()), Matrix3::zeros());
        assert_eq!(
            hat(&Vector3::new(1.0, 0.0, 0.0)),
            Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
        );
        let w = Vector3::new(0.3, -1.2, 2.5);
        let u = Vector3::new(-0.7, 0.1, 0.9);
        let cross = Vector3::new(
            w.y * u.z - w.z * u.y,
            w.z * u.x - w.x * u.z,
            w.x * u.y - w.y * u.x,
        );
        assert!((hat(&w) * u - cross).norm() < 1e-14);
        let h = hat(&w);
        assert_eq!(h, -h.transpose());
    }

    #[test]
    fn retract_zero_is_exact() {
        let t = Se3Transform::exp(&twist([0.5, 0.1, -0.3, 0.2, -0.4, 0.7]));
        assert_eq!(t.retract(&Twist::zero()), t);
        let xi = twist([0.1, 0.2, 0.3, -0.1, 0.05, 0.2]);
        assert_eq!(
            retract(&xi, &Se3Transform::identity()).to_components(),
            Se3Transform::exp(&xi).compose(&Se3Transform::identity()).to_components()
        );
    }

    #[test]
    fn small_angle_branch_is_continuous() {
        let eps = 1e-12;
        let dir = Vector3::new(0.6, -0.8, 0.0);
        let tau = Vector3::new(0.3, 0.2, -0.1);
        let below = Se3Transform::exp(&Twist::new(tau, dir * (SMALL_ANGLE - eps)));
        let above = Se3Transform::exp(&Twist::new(tau, dir * (SMALL_ANGLE + eps)));
        let a = below.to_components();
        let b = above.to_components();
        for k in 0..7 {
            assert!((a[k] - b[k]).abs() < 1e-12, "component {k}");
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = Se3Transform::exp(&twist([1.0, -2.0, 0.5, 0.9, -1.1, 0.4]));
        assert!(t.compose(&t.inverse()).log().norm() < 1e-10);
        assert!(t.inverse().compose(&t).log().norm() < 1e-10);
    }
}
