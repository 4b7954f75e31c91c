//! Per-part joint estimation from clustered per-point predictions.
//!
//! Directions are aggregated through the principal eigenvector of the sum of
//! outer products, which ignores the sign of each vote. The revolute axis
//! line is anchored at the mean of the projected points `p + v̂`.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{distance_to_line, foot_on_line, JointParams, JointType, Vec3};
use crate::scene::{PerPointFields, Semantic};

pub const DEFAULT_MIN_SUPPORT: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    pub params: JointParams,
    /// Number of points that voted.
    pub support: usize,
    /// RMS unoriented angle between the votes and the estimated axis, radians.
    pub direction_dispersion: f64,
    /// RMS distance of the projected points to the estimated axis line, meters.
    pub origin_rms: f64,
}

fn principal_axis(scatter: Matrix3<f64>) -> Vec3 {
    let eig = SymmetricEigen::new(scatter);
    let k = eig.eigenvalues.imax();
    eig.eigenvectors.column(k).into_owned().normalize()
}

/// Sign-invariant consensus direction of unit votes, oriented to agree with
/// the first vote.
pub fn vote_axis_direction(dirs: &[Vec3]) -> Result<Vec3> {
    let first = dirs.first().ok_or_else(|| Error::Validation("no direction votes".into()))?;
    let scatter = dirs.iter().fold(Matrix3::zeros(), |acc, d| acc + d * d.transpose());
    let u = principal_axis(scatter);
    Ok(if u.dot(first) < 0.0 { -u } else { u })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub dir: Vec3,
    pub point: Vec3,
    /// RMS point-to-line distance.
    pub residual_rms: f64,
}

/// Total-least-squares line: through the centroid along the principal
/// component of the centered points.
pub fn fit_axis_line(points: &[Vec3]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("a line needs at least two points".into()));
    }
    let centroid = mean(points);
    let spread = points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
    if spread < 1e-12 {
        return Err(Error::DegenerateFit("all points coincide".into()));
    }
    let scatter = points.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - centroid;
        acc + d * d.transpose()
    });
    let dir = principal_axis(scatter);
    Ok(LineFit { dir, point: centroid, residual_rms: line_rms(points, &centroid, &dir) })
}

fn mean(points: &[Vec3]) -> Vec3 {
    points.iter().sum::<Vec3>() / points.len() as f64
}

fn line_rms(points: &[Vec3], point: &Vec3, dir: &Vec3) -> f64 {
    let ss: f64 = points.iter().map(|p| distance_to_line(p, point, dir).powi(2)).sum();
    (ss / points.len() as f64).sqrt()
}

/// Majority joint type among movable votes; ties go to revolute.
pub fn classify_joint_type(semantics: &[Semantic]) -> Result<JointType> {
    let rev = semantics.iter().filter(|&&s| s == Semantic::Revolute).count();
    let pri = semantics.iter().filter(|&&s| s == Semantic::Prismatic).count();
    match (rev, pri) {
        (0, 0) => Err(Error::Validation("no movable class votes".into())),
        (r, p) if r >= p => Ok(JointType::Revolute),
        _ => Ok(JointType::Prismatic),
    }
}

/// Estimates the joint of one segmented part from its points and their
/// predicted fields (`fields` rows aligned with `part_points`).
pub fn vote_joint(part_points: &[Vec3], fields: &PerPointFields, min_support: usize) -> Result<JointEstimate> {
    if part_points.len() != fields.len() {
        return Err(Error::Validation("part points and fields are not aligned".into()));
    }
    let support = part_points.len();
    if support < min_support.max(1) {
        return Err(Error::InsufficientSupport { support, required: min_support.max(1) });
    }
    let semantics: Vec<Semantic> = (0..support).map(|i| fields.predicted_class(i)).collect();
    let joint_type = classify_joint_type(&semantics)?;
    let axis = vote_axis_direction(&fields.axis_dir)?;
    let direction_dispersion = {
        let ss: f64 = fields
            .axis_dir
            .iter()
            .map(|d| d.cross(&axis).norm().atan2(d.dot(&axis).abs()).powi(2))
            .sum();
        (ss / support as f64).sqrt()
    };

    let centroid = mean(part_points);
    let projected: Vec<Vec3> = part_points.iter().zip(&fields.projection).map(|(p, v)| p + v).collect();
    let line_point = mean(&projected);
    let origin_rms = line_rms(&projected, &line_point, &axis);
    let origin = match joint_type {
        JointType::Revolute => foot_on_line(&centroid, &line_point, &axis),
        JointType::Prismatic => centroid,
    };
    Ok(JointEstimate {
        params: JointParams::new(axis, origin, joint_type)?,
        support,
        direction_dispersion,
        origin_rms,
    })
}
