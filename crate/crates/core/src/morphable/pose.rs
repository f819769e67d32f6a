//! Pose parameter layout, nearest-rotation decomposition and Euler angles.
//!
//! Euler convention: `P = R_x(pitch) · R_y(yaw) · R_z(roll)`, angles in
//! degrees. The same convention is used for predictions and groundtruth.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::params::POSE_DIM;
use crate::error::{Error, Result};

/// Singular values below this make the linear block of `α_p` degenerate.
pub const MIN_SINGULAR_VALUE: f64 = 1e-12;

/// Tolerance for accepting a matrix as a rotation in [`rotation_to_euler`].
pub const ROTATION_TOLERANCE: f64 = 1e-6;

const GIMBAL_EPS: f64 = 1e-9;

/// Similarity transform `x ↦ scale · rotation · x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(scale: f64, rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::contract(format!("pose scale must be positive, got {scale}")));
        }
        check_rotation(&rotation, 1e-9)?;
        Ok(Self {
            scale,
            rotation,
            translation,
        })
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            scale: 1.0 / self.scale,
            rotation: rt,
            translation: -(rt * self.translation) / self.scale,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.scale * (self.rotation * Vector3::from(p)) + self.translation;
        [v.x, v.y, v.z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl EulerAngles {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        Self { yaw, pitch, roll }
    }
}

/// Reads `α_p` as a row-major 3×4 block `[A | t]` and projects `A` onto
/// `scale · rotation` (scale = mean singular value, rotation = nearest
/// proper rotation).
pub fn decompose_pose(alpha_p: &[f64]) -> Result<Pose> {
    if alpha_p.len() != POSE_DIM {
        return Err(Error::Shape {
            op: "decompose_pose",
            left: vec![POSE_DIM],
            right: vec![alpha_p.len()],
        });
    }
    if alpha_p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pose parameters".into()));
    }
    let a = linear_block(alpha_p);
    let svd = a.svd(true, true);
    let smin = svd.singular_values.min();
    if smin < MIN_SINGULAR_VALUE {
        return Err(Error::DegeneratePose(smin));
    }
    let u = svd.u.expect("svd computed with u");
    let v_t = svd.v_t.expect("svd computed with v_t");
    let d = (u * v_t).determinant().signum();
    let rotation = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let scale = svd.singular_values.mean();
    Ok(Pose {
        scale,
        rotation,
        translation: Vector3::new(alpha_p[3], alpha_p[7], alpha_p[11]),
    })
}

/// Inverse of [`decompose_pose`]: `[scale·rotation | translation]`, row-major.
pub fn compose_pose(pose: &Pose) -> [f64; POSE_DIM] {
    let a = pose.scale * pose.rotation;
    let t = pose.translation;
    [
        a[(0, 0)], a[(0, 1)], a[(0, 2)], t.x,
        a[(1, 0)], a[(1, 1)], a[(1, 2)], t.y,
        a[(2, 0)], a[(2, 1)], a[(2, 2)], t.z,
    ]
}

/// The raw 3×3 block of `α_p`.
pub fn linear_block(alpha_p: &[f64]) -> Matrix3<f64> {
    Matrix3::new(
        alpha_p[0], alpha_p[1], alpha_p[2],
        alpha_p[4], alpha_p[5], alpha_p[6],
        alpha_p[8], alpha_p[9], alpha_p[10],
    )
}

pub fn rot_x(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(deg: f64) -> Matrix3<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn euler_to_rotation(e: &EulerAngles) -> Matrix3<f64> {
    rot_x(e.pitch) * rot_y(e.yaw) * rot_z(e.roll)
}

pub fn rotation_to_euler(p: &Matrix3<f64>) -> Result<EulerAngles> {
    check_rotation(p, ROTATION_TOLERANCE)?;
    let s = p[(0, 2)].clamp(-1.0, 1.0);
    let yaw = s.asin();
    let (pitch, roll) = if p[(0, 2)].abs() > 1.0 - GIMBAL_EPS {
        // cos(yaw) ≈ 0: only pitch ± roll is observable, roll is pinned to 0.
        (s.signum() * p[(1, 0)].atan2(p[(1, 1)]), 0.0)
    } else {
        ((-p[(1, 2)]).atan2(p[(2, 2)]), (-p[(0, 1)]).atan2(p[(0, 0)]))
    };
    Ok(EulerAngles {
        yaw: yaw.to_degrees(),
        pitch: pitch.to_degrees(),
        roll: roll.to_degrees(),
    })
}

fn check_rotation(p: &Matrix3<f64>, tol: f64) -> Result<()> {
    let ortho = (p.transpose() * p - Matrix3::identity()).abs().max();
    let det = p.determinant();
    if !(ortho <= tol) || !((det - 1.0).abs() <= tol) {
        return Err(Error::contract(format!(
            "matrix is not a proper rotation (|PᵀP − I|max = {ortho:e}, det = {det})"
        )));
    }
    Ok(())
}

/// Smallest signed difference `a − b` mapped into `[−180, 180]` degrees.
pub fn wrap_degrees(diff: f64) -> f64 {
    let mut d = diff % 360.0;
    if d > 180.0 {
        d -= 360.0;
    } else if d < -180.0 {
        d += 360.0;
    }
    d
}
