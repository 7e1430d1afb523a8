//! Rigid-body and similarity transforms.
//!
//! Poses are stored as a unit quaternion plus a translation. The quaternion is
//! kept in the canonical hemisphere (`w >= 0`) so that two equal rotations
//! always print the same way. Tangent vectors are ordered `[rho; phi]`
//! (translation part first), matching [`Twist`].

use std::fmt;
use std::ops::Mul;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// `log` refuses rotations whose angle is this close to pi.
pub const NEAR_PI: f64 = 1e-6;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Flips the quaternion into the `w >= 0` hemisphere.
pub fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

pub fn so3_exp(phi: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = phi.norm();
    let q = if theta < SMALL_ANGLE {
        // first-order expansion, renormalised
        Quaternion::new(1.0, 0.5 * phi.x, 0.5 * phi.y, 0.5 * phi.z)
    } else {
        let half = 0.5 * theta;
        let k = half.sin() / theta;
        Quaternion::new(half.cos(), k * phi.x, k * phi.y, k * phi.z)
    };
    canonical(UnitQuaternion::new_normalize(q))
}

/// Rotation vector of `q`, valid on the whole of SO(3); the result has norm in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = canonical(*q);
    let v = q.imag();
    let sin_half = v.norm();
    if sin_half < SMALL_ANGLE {
        v * (2.0 / q.w)
    } else {
        let theta = 2.0 * sin_half.atan2(q.w);
        v * (theta / sin_half)
    }
}

pub fn rotation_angle(q: &UnitQuaternion<f64>) -> f64 {
    so3_log(q).norm()
}

/// Inverse of the right Jacobian of SO(3), `Jr^-1(phi)`.
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let w = skew(phi);
    if theta < 1e-6 {
        return Matrix3::identity() + 0.5 * w + (1.0 / 12.0) * w * w;
    }
    let half = 0.5 * theta;
    // cot(theta/2) / (2 theta) stays finite as theta -> pi
    let coeff = 1.0 / (theta * theta) - half.cos() / (2.0 * theta * half.sin());
    Matrix3::identity() + 0.5 * w + coeff * w * w
}

fn se3_v(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let w = skew(phi);
    if theta < SMALL_ANGLE {
        Matrix3::identity() + 0.5 * w + (1.0 / 6.0) * w * w
    } else {
        let t2 = theta * theta;
        Matrix3::identity()
            + ((1.0 - theta.cos()) / t2) * w
            + ((theta - theta.sin()) / (t2 * theta)) * w * w
    }
}

fn se3_v_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let w = skew(phi);
    if theta < SMALL_ANGLE {
        Matrix3::identity() - 0.5 * w + (1.0 / 12.0) * w * w
    } else {
        let coeff = (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta);
        Matrix3::identity() - 0.5 * w + coeff * w * w
    }
}

/// Element of se(3): `rho` is the translational part, `phi` the rotation vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl Twist {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self { rho: Vector3::zeros(), phi: Vector3::zeros() }
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rho: Vector3::new(v[0], v[1], v[2]),
            phi: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn norm(&self) -> f64 {
        (self.rho.norm_squared() + self.phi.norm_squared()).sqrt()
    }
}

/// A rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Builds a pose, renormalising the rotation and fixing its sign.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        let rotation = canonical(UnitQuaternion::new_normalize(rotation.into_inner()));
        Self { rotation, translation }
    }

    /// Builds a pose without renormalising; used by parsers so that printed
    /// coefficients survive a round trip bit for bit.
    pub(crate) fn from_raw(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation: canonical(rotation), translation }
    }

    pub fn identity() -> Self {
        Self { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self { rotation: UnitQuaternion::identity(), translation }
    }

    /// Planar pose at `(x, y, 0)` with heading `yaw` about +z.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw), Vector3::new(x, y, 0.0))
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.translation + self.rotation * other.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn exp(twist: &Twist) -> Pose {
        Pose::new(so3_exp(&twist.phi), se3_v(&twist.phi) * twist.rho)
    }

    pub fn log(&self) -> Result<Twist> {
        let phi = so3_log(&self.rotation);
        let angle = phi.norm();
        if (std::f64::consts::PI - angle).abs() < NEAR_PI {
            return Err(Error::AngleNearPi { angle });
        }
        Ok(Twist { rho: se3_v_inv(&phi) * self.translation, phi })
    }

    /// Right perturbation `self * exp(delta)`.
    pub fn retract(&self, delta: &Twist) -> Pose {
        self.compose(&Pose::exp(delta))
    }

    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Quaternion coefficients in `(w, x, y, z)` order.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
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

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let [w, x, y, z] = self.quaternion_wxyz();
        write!(f, "Pose(t=[{:.4}, {:.4}, {:.4}], q=[{:.4}, {:.4}, {:.4}, {:.4}])", t.x, t.y, t.z, w, x, y, z)
    }
}

/// `a^-1 * b`: the pose of `b` expressed in the frame of `a`.
pub fn relative(a: &Pose, b: &Pose) -> Pose {
    a.inverse().compose(b)
}

/// `x -> scale * R x + t`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self { scale: 1.0, rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.scale * (self.rotation * p) + self.translation
    }

    /// Maps a pose: position through the similarity, orientation through its rotation.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose::new(self.rotation * pose.rotation(), self.apply(pose.translation()))
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self {
            scale: 1.0 / self.scale,
            rotation: rinv,
            translation: -(rinv * self.translation) / self.scale,
        }
    }

    /// Root-mean-square distance between `apply(estimated[i])` and `reference[i]`.
    pub fn rms_residual(&self, estimated: &[Vector3<f64>], reference: &[Vector3<f64>]) -> f64 {
        if estimated.is_empty() {
            return 0.0;
        }
        let sum: f64 = estimated
            .iter()
            .zip(reference)
            .map(|(e, r)| (self.apply(e) - r).norm_squared())
            .sum();
        (sum / estimated.len() as f64).sqrt()
    }
}

/// Least-squares similarity (or rigid, when `with_scale` is false) transform
/// taking `estimated` onto `reference`, via the SVD closed form with the
/// reflection correction.
pub fn umeyama_align(
    estimated: &[Vector3<f64>],
    reference: &[Vector3<f64>],
    with_scale: bool,
) -> Result<SimilarityTransform> {
    if estimated.len() != reference.len() {
        return Err(Error::DegenerateInput(format!(
            "point sets differ in length ({} vs {})",
            estimated.len(),
            reference.len()
        )));
    }
    let n = estimated.len();
    if n < 3 {
        return Err(Error::DegenerateInput(format!("need at least 3 point pairs, got {n}")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_x = estimated.iter().sum::<Vector3<f64>>() * inv_n;
    let mu_y = reference.iter().sum::<Vector3<f64>>() * inv_n;

    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in estimated.iter().zip(reference) {
        let dx = x - mu_x;
        cov += (y - mu_y) * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov *= inv_n;
    var_x *= inv_n;
    if var_x < 1e-24 {
        return Err(Error::DegenerateInput("estimated points have zero variance".into()));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)]) / var_x
    } else {
        1.0
    };
    let rotation = UnitQuaternion::from_matrix(&r);
    let translation = mu_y - scale * (rotation * mu_x);
    Ok(SimilarityTransform { scale, rotation, translation })
}
