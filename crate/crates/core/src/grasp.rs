//! Contact-point candidates ranked by a geometric actionability score.
//!
//! For revolute parts the score is the moment arm about the estimated axis,
//! normalized by the largest arm on the part. Prismatic parts score 1
//! everywhere, so ranking falls back to point index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{distance_to_line, JointType, Vec3};
use crate::voting::JointEstimate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    /// Index of the point within the part.
    pub index: usize,
    pub point: Vec3,
    pub approach_dir: Vec3,
    pub score: f64,
}

/// Largest distance from the part's points to the estimated axis line.
pub fn max_moment_arm(part_points: &[Vec3], estimate: &JointEstimate) -> f64 {
    let j = &estimate.params;
    part_points
        .iter()
        .map(|p| distance_to_line(p, &j.origin, &j.axis_dir))
        .fold(0.0, f64::max)
}

/// Score in `[0, 1]` of `point` given the part's largest moment arm.
pub fn actionability_score(point: &Vec3, estimate: &JointEstimate, max_arm: f64) -> f64 {
    let j = &estimate.params;
    match j.joint_type {
        JointType::Prismatic => 1.0,
        JointType::Revolute if max_arm > 0.0 => {
            (distance_to_line(point, &j.origin, &j.axis_dir) / max_arm).clamp(0.0, 1.0)
        }
        JointType::Revolute => 0.0,
    }
}

/// The `k` best-scoring part points, ordered by score then index. Surface
/// normals, when supplied, give the approach direction; otherwise it points
/// away from the part centroid.
pub fn propose_candidates(
    part_points: &[Vec3],
    normals: Option<&[Vec3]>,
    estimate: &JointEstimate,
    k: usize,
) -> Result<Vec<GraspCandidate>> {
    if part_points.is_empty() {
        return Err(Error::Validation("cannot propose grasps on an empty part".into()));
    }
    if k == 0 {
        return Err(Error::Validation("k must be at least 1".into()));
    }
    if normals.is_some_and(|n| n.len() != part_points.len()) {
        return Err(Error::Validation("normals are not aligned with part points".into()));
    }
    let centroid = part_points.iter().sum::<Vec3>() / part_points.len() as f64;
    let max_arm = max_moment_arm(part_points, estimate);
    let mut candidates: Vec<GraspCandidate> = part_points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            let approach_dir = match normals {
                Some(n) => n[index],
                None => {
                    let d = p - centroid;
                    if d.norm() > 1e-12 { d.normalize() } else { estimate.params.axis_dir }
                }
            };
            GraspCandidate { index, point: *p, approach_dir, score: actionability_score(p, estimate, max_arm) }
        })
        .collect();
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    candidates.truncate(k);
    Ok(candidates)
}
