//! Table-style modeling metrics over batches of scenes: AP at an IoU
//! threshold, joint-type accuracy, and axis and origin errors of matched
//! parts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clustering::{match_parts, segmentation_ap};
use crate::error::{Error, Result};
use crate::kinematics::{axis_angular_error, axis_origin_error, JointParams, JointType};
use crate::voting::JointEstimate;

/// IoU threshold of the AP75 metric.
pub const AP_IOU: f64 = 0.75;

/// Everything needed to score one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEstimates {
    /// Scene key, usually its seed.
    pub scene: u64,
    /// Predicted cluster per point, `-1` for noise.
    pub cluster_id: Vec<i32>,
    /// Ground-truth part per point, 0 for the static body.
    pub gt_part_id: Vec<u32>,
    /// Joint estimate of each cluster that could be voted.
    pub estimates: BTreeMap<i32, JointEstimate>,
    pub gt: BTreeMap<u32, JointParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMetrics {
    pub scene: u64,
    pub ap75: f64,
    /// `None` when no part was matched.
    pub type_accuracy: Option<f64>,
    pub mean_axis_error_deg: Option<f64>,
    /// `None` when no revolute part was matched.
    pub mean_origin_error_m: Option<f64>,
    pub n_gt_parts: usize,
    pub n_matched: usize,
}

/// Aggregates are plain means over the scenes where the value is defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelingReport {
    pub n_scenes: usize,
    pub ap75: f64,
    pub type_accuracy: Option<f64>,
    pub mean_axis_error_deg: Option<f64>,
    pub mean_origin_error_m: Option<f64>,
    pub scenes: Vec<SceneMetrics>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores one scene. A part is matched when its IoU-matched cluster reaches
/// [`AP_IOU`] and has an estimate; only matched parts enter the type, axis
/// and origin statistics, and origin error only for revolute ground truth.
pub fn evaluate_scene(scene: &SceneEstimates) -> Result<SceneMetrics> {
    let ap75 = segmentation_ap(&scene.cluster_id, &scene.gt_part_id, AP_IOU)?;
    let mut typed = Vec::new();
    let mut axis = Vec::new();
    let mut origin = Vec::new();
    for m in match_parts(&scene.cluster_id, &scene.gt_part_id)? {
        if m.iou < AP_IOU {
            continue;
        }
        let Some(est) = scene.estimates.get(&m.cluster) else { continue };
        let gt = scene
            .gt
            .get(&m.part_id)
            .ok_or_else(|| Error::Validation(format!("scene {}: no ground truth for part {}", scene.scene, m.part_id)))?;
        typed.push(if est.params.joint_type == gt.joint_type { 1.0 } else { 0.0 });
        axis.push(axis_angular_error(&est.params.axis_dir, &gt.axis_dir)?);
        if gt.joint_type == JointType::Revolute {
            let as_revolute = JointParams { joint_type: JointType::Revolute, ..est.params };
            origin.push(axis_origin_error(&as_revolute, gt)?);
        }
    }
    Ok(SceneMetrics {
        scene: scene.scene,
        ap75,
        type_accuracy: mean(typed.iter().copied()),
        mean_axis_error_deg: mean(axis.iter().copied()),
        mean_origin_error_m: mean(origin.iter().copied()),
        n_gt_parts: scene.gt.len(),
        n_matched: typed.len(),
    })
}

pub fn evaluate_modeling(scenes: &[SceneEstimates]) -> Result<ModelingReport> {
    if scenes.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty batch".into()));
    }
    let per_scene = scenes.iter().map(evaluate_scene).collect::<Result<Vec<_>>>()?;
    Ok(aggregate(per_scene))
}

/// Builds the report from already scored scenes.
pub fn aggregate(scenes: Vec<SceneMetrics>) -> ModelingReport {
    ModelingReport {
        n_scenes: scenes.len(),
        ap75: mean(scenes.iter().map(|s| s.ap75)).unwrap_or(0.0),
        type_accuracy: mean(scenes.iter().filter_map(|s| s.type_accuracy)),
        mean_axis_error_deg: mean(scenes.iter().filter_map(|s| s.mean_axis_error_deg)),
        mean_origin_error_m: mean(scenes.iter().filter_map(|s| s.mean_origin_error_m)),
        scenes,
    }
}
