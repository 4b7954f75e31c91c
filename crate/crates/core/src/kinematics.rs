//! Rigid-motion primitives for one-DOF revolute and prismatic joints.
//!
//! A joint is described by an axis direction `u`, an origin `q` on the axis
//! line and a joint type. Revolute joints rotate about the line through `q`
//! with direction `u`; prismatic joints translate along `u`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance on `‖u‖ = 1` accepted by the motion operations.
pub const UNIT_TOLERANCE: f64 = 1e-9;

/// Constructors re-normalize axes within this distance of unit length.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

impl JointType {
    pub fn as_str(self) -> &'static str {
        match self {
            JointType::Revolute => "revolute",
            JointType::Prismatic => "prismatic",
        }
    }
}

/// Articulation parameters of one movable part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointParams {
    pub axis_dir: Vec3,
    pub origin: Vec3,
    pub joint_type: JointType,
}

impl JointParams {
    /// Builds joint parameters, re-normalizing `axis_dir` when it is within
    /// [`RENORMALIZE_TOLERANCE`] of unit length.
    pub fn new(axis_dir: Vec3, origin: Vec3, joint_type: JointType) -> Result<Self> {
        let axis_dir = renormalize(axis_dir)?;
        if !origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "joint origin must be finite, got {:?}",
                origin.as_slice()
            )));
        }
        Ok(Self {
            axis_dir,
            origin,
            joint_type,
        })
    }

    pub fn revolute(axis_dir: Vec3, origin: Vec3) -> Result<Self> {
        Self::new(axis_dir, origin, JointType::Revolute)
    }

    pub fn prismatic(axis_dir: Vec3, origin: Vec3) -> Result<Self> {
        Self::new(axis_dir, origin, JointType::Prismatic)
    }

    /// Checks the invariants of values that did not pass through [`JointParams::new`],
    /// e.g. deserialized documents.
    pub fn validate(&self) -> Result<()> {
        check_unit(&self.axis_dir)?;
        if !self.origin.iter().all(|c| c.is_finite()) {
            return Err(Error::InvalidParameter("joint origin must be finite".into()));
        }
        Ok(())
    }

    /// Moves `p` by `displacement` (radians or meters depending on the joint type).
    pub fn apply(&self, p: &Vec3, displacement: f64) -> Result<Vec3> {
        match self.joint_type {
            JointType::Revolute => rotate_about_axis(p, self, displacement),
            JointType::Prismatic => translate_along_axis(p, self, displacement),
        }
    }
}

fn renormalize(u: Vec3) -> Result<Vec3> {
    let norm = u.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > RENORMALIZE_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "axis direction must be unit length, got norm {norm}"
        )));
    }
    Ok(u / norm)
}

pub fn check_unit(u: &Vec3) -> Result<()> {
    let norm = u.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::InvalidParameter(format!(
            "axis direction must be unit length, got norm {norm}"
        )));
    }
    Ok(())
}

/// Skew-symmetric cross-product matrix of `u`.
pub fn skew(u: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Rodrigues rotation matrix `cos θ I + (1 − cos θ) u uᵀ + sin θ [u]×`.
pub fn rodrigues(u: &Vec3, theta: f64) -> Matrix3<f64> {
    let (s, c) = theta.sin_cos();
    Matrix3::identity() * c + (u * u.transpose()) * (1.0 - c) + skew(u) * s
}

/// Rotates `p` about the axis line through `joint.origin` with direction
/// `joint.axis_dir` by `theta` radians.
pub fn rotate_about_axis(p: &Vec3, joint: &JointParams, theta: f64) -> Result<Vec3> {
    check_unit(&joint.axis_dir)?;
    if !theta.is_finite() {
        return Err(Error::InvalidParameter(format!("rotation angle must be finite, got {theta}")));
    }
    let q = joint.origin;
    Ok(q + rodrigues(&joint.axis_dir, theta) * (p - q))
}

pub fn translate_along_axis(p: &Vec3, joint: &JointParams, delta: f64) -> Result<Vec3> {
    check_unit(&joint.axis_dir)?;
    if !delta.is_finite() {
        return Err(Error::InvalidParameter(format!("translation must be finite, got {delta}")));
    }
    Ok(p + joint.axis_dir * delta)
}

/// Returns the foot of `p` on the joint's axis line and the projection
/// vector `foot − p`, which is perpendicular to the axis.
pub fn project_point_to_axis(p: &Vec3, joint: &JointParams) -> Result<(Vec3, Vec3)> {
    check_unit(&joint.axis_dir)?;
    let foot = foot_on_line(p, &joint.origin, &joint.axis_dir);
    Ok((foot, foot - p))
}

/// Closest point to `p` on the line through `point` with unit direction `dir`.
pub fn foot_on_line(p: &Vec3, point: &Vec3, dir: &Vec3) -> Vec3 {
    point + dir * (p - point).dot(dir)
}

pub fn distance_to_line(p: &Vec3, point: &Vec3, dir: &Vec3) -> f64 {
    let rel = p - point;
    (rel - dir * rel.dot(dir)).norm()
}

/// Unoriented angle between two axes in degrees, in `[0, 90]`.
pub fn axis_angular_error(u_est: &Vec3, u_gt: &Vec3) -> Result<f64> {
    let (a, b) = (u_est.norm(), u_gt.norm());
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter("axis direction must be nonzero".into()));
    }
    let (ua, ub) = (u_est / a, u_gt / b);
    // atan2 keeps full precision near 0°, where acos does not.
    let angle = ua.cross(&ub).norm().atan2(ua.dot(&ub).abs());
    Ok(angle.to_degrees())
}

/// Distance from the estimated origin to the ground-truth axis line, meters.
pub fn axis_origin_error(est: &JointParams, gt: &JointParams) -> Result<f64> {
    if est.joint_type != JointType::Revolute || gt.joint_type != JointType::Revolute {
        return Err(Error::UnsupportedMetric(
            "origin error is undefined for prismatic joints".into(),
        ));
    }
    check_unit(&gt.axis_dir)?;
    Ok(distance_to_line(&est.origin, &gt.origin, &gt.axis_dir))
}

/// Two unit vectors completing `u` to a right-handed orthonormal frame.
pub fn perpendicular_basis(u: &Vec3) -> (Vec3, Vec3) {
    let helper = if u.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = u.cross(&helper).normalize();
    let e2 = u.cross(&e1);
    (e1, e2)
}

/// Signed angle from `a` to `b` about the unit axis `u`, using only the
/// components perpendicular to `u`. Returns 0 when either is parallel to `u`.
pub fn signed_angle_about(u: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let a_perp = a - u * a.dot(u);
    let b_perp = b - u * b.dot(u);
    u.dot(&a_perp.cross(&b_perp)).atan2(a_perp.dot(&b_perp))
}
