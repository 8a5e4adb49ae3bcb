//! Scaled orthographic projection and rotation parameterizations.
//!
//! The projection of a 3D point `v` is `s * [R v]_xy + s * t`: rotate, drop
//! the depth coordinate, scale, and add the scaled 2D translation. Scale `s`
//! has units of pixels per model unit and multiplies the translation as well.
//!
//! Image coordinate convention used throughout the crate: x grows to the
//! right, y grows downward, and the origin is the centre of the top-left
//! pixel. Depth is the rotated z coordinate; the viewer looks along +z from
//! z = -inf, so smaller z is closer to the camera.

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

const ORTHONORMALITY_TOL: f64 = 1e-10;

/// Rigid pose plus isotropic scale for scaled orthographic projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector2<f64>,
    pub scale: f64,
}

impl Pose {
    /// Builds a pose, validating that `rotation` is a proper rotation and
    /// `scale` is positive.
    pub fn new(rotation: Matrix3<f64>, translation: Vector2<f64>, scale: f64) -> Result<Self> {
        check_rotation(&rotation)?;
        if !(scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Pose {
            rotation,
            translation,
            scale,
        })
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Matrix3::identity(),
            translation: Vector2::zeros(),
            scale: 1.0,
        }
    }

    /// Converts to the axis-angle parameterization used by the nonlinear
    /// refinement stages.
    pub fn to_axis_angle(&self) -> AxisAnglePose {
        AxisAnglePose {
            rotation: matrix_to_axis_angle(&self.rotation)
                .expect("Pose invariant guarantees a valid rotation"),
            translation: self.translation,
            scale: self.scale,
        }
    }
}

/// Pose with the rotation stored as an axis-angle vector (angle in radians
/// times unit axis, canonical range `|r| <= pi`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisAnglePose {
    pub rotation: Vector3<f64>,
    pub translation: Vector2<f64>,
    pub scale: f64,
}

impl AxisAnglePose {
    pub fn to_pose(&self) -> Pose {
        Pose {
            rotation: axis_angle_to_matrix(&self.rotation),
            translation: self.translation,
            scale: self.scale,
        }
    }
}

/// Scaled orthographic projection of a single 3D point.
#[inline]
pub fn sop(v: &Vector3<f64>, pose: &Pose) -> Vector2<f64> {
    let rv = pose.rotation * v;
    Vector2::new(
        pose.scale * (rv.x + pose.translation.x),
        pose.scale * (rv.y + pose.translation.y),
    )
}

/// Depth (rotated z) of a point under a pose, in model units.
#[inline]
pub fn sop_depth(v: &Vector3<f64>, pose: &Pose) -> f64 {
    pose.rotation.row(2).transpose().dot(v)
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let gram = r.transpose() * r;
    let ortho_err = (gram - Matrix3::identity()).abs().max();
    if ortho_err > ORTHONORMALITY_TOL {
        return Err(Error::InvalidArgument(format!(
            "matrix is not orthonormal (|R'R - I| = {ortho_err:.3e})"
        )));
    }
    let det = r.determinant();
    if (det - 1.0).abs() > ORTHONORMALITY_TOL {
        return Err(Error::InvalidArgument(format!(
            "matrix has determinant {det}, not a proper rotation"
        )));
    }
    Ok(())
}

/// Angle below which the Rodrigues coefficients switch to series expansions.
const SMALL_ANGLE: f64 = 1e-7;

/// Rodrigues' formula: axis-angle vector to rotation matrix.
///
/// `R = I + a [r]x + b [r]x^2` with `a = sin(t)/t`, `b = (1-cos(t))/t^2`;
/// both coefficients go over to their series below `SMALL_ANGLE` to avoid
/// the 0/0 at the identity.
pub fn axis_angle_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    let k = skew(r);
    Matrix3::identity() + k * a + k * k * b
}

/// Inverse of [`axis_angle_to_matrix`]. Returns the canonical representative
/// with `|r| <= pi`.
pub fn matrix_to_axis_angle(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    check_rotation(r)?;
    let trace = r.trace();
    let cos_theta = ((trace - 1.0) / 2.0).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    // Antisymmetric part encodes sin(theta) * axis.
    let w = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );

    if theta < SMALL_ANGLE {
        // R ~ I + [r]x, so w ~ 2 r.
        return Ok(w * 0.5);
    }

    let sin_theta = theta.sin();
    if sin_theta > 1e-4 {
        return Ok(w * (theta / (2.0 * sin_theta)));
    }

    // Near pi the antisymmetric part vanishes; recover the axis from the
    // symmetric part R + I = 2(cos(t) I + (1-cos(t)) rr') ~ 2 rr'.
    let m = r + Matrix3::identity();
    let diag = [m[(0, 0)], m[(1, 1)], m[(2, 2)]];
    let k = if diag[0] >= diag[1] && diag[0] >= diag[2] {
        0
    } else if diag[1] >= diag[2] {
        1
    } else {
        2
    };
    let mut axis = Vector3::new(m[(0, k)], m[(1, k)], m[(2, k)]);
    axis /= axis.norm();
    // Fix the sign from the (tiny but still informative) antisymmetric part.
    if w.dot(&axis) < 0.0 {
        axis = -axis;
    }
    Ok(axis * theta)
}

/// Directional derivative of the rotated point: column `k` of the returned
/// matrix is `d(R(r) v)/d r_k`.
///
/// Uses `dR/dr_k = (r_k [r]x + [r x (I - R) e_k]x) R / |r|^2`, which reduces
/// to `[e_k]x` at the identity.
pub fn rotate_point_jacobian(r: &Vector3<f64>, v: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = r.norm_squared();
    let rot = axis_angle_to_matrix(r);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // d(Rv)/dr at r=0 is -[v]x.
        return -skew(v);
    }
    let rv = rot * v;
    let mut jac = Matrix3::zeros();
    for k in 0..3 {
        let mut e = Vector3::zeros();
        e[k] = 1.0;
        let cross_term = r.cross(&((Matrix3::identity() - rot) * e));
        let dr = (skew(r) * r[k] + skew(&cross_term)) / theta2;
        jac.set_column(k, &(dr * rv));
    }
    jac
}

#[inline]
pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
