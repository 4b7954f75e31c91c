//! Seeded batch experiments: generate scenes, corrupt their oracle fields,
//! segment, vote, optionally run receding-horizon refinement, and score the
//! batch. Output is deterministic given the config.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::clustering::{match_parts, segment_parts, ClusterParams};
use crate::error::{Error, Result};
use crate::generator::SceneRecipe;
use crate::grasp::propose_candidates;
use crate::kinematics::{perpendicular_basis, rodrigues, JointParams, JointType, Vec3};
use crate::metrics::{aggregate, evaluate_scene, ModelingReport, SceneEstimates, AP_IOU};
use crate::planner::{receding_horizon_run, PlanConfig, RunLog};
use crate::scene::{corrupt_fields, ground_truth_fields, sample_cloud, ArticulatedObject, NoiseModel};
use crate::voting::{vote_joint, JointEstimate, DEFAULT_MIN_SUPPORT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_scenes: usize,
    /// Inclusive range of movable parts per scene.
    pub parts_per_scene: [usize; 2],
    pub n_points: usize,
    pub recipe: SceneRecipe,
    /// Field corruption; its `rng_seed` is replaced per scene.
    pub noise: NoiseModel,
    pub cluster: ClusterParams,
    pub min_support: usize,
    pub refinement: Option<RefinementSettings>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scenes: 50,
            parts_per_scene: [1, 3],
            n_points: 4096,
            recipe: SceneRecipe::default(),
            noise: NoiseModel::default(),
            cluster: ClusterParams::default(),
            min_support: DEFAULT_MIN_SUPPORT,
            refinement: None,
        }
    }
}

/// Receding-horizon runs on every matched part, starting from its voted
/// estimate perturbed by a fixed axis tilt and origin offset in random
/// perpendicular directions. The part is first moved to its lower limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinementSettings {
    pub axis_perturbation_deg: f64,
    /// Revolute parts only.
    pub origin_offset_m: f64,
    /// Radians; clipped to the joint range.
    pub revolute_target: f64,
    /// Meters; clipped to the joint range.
    pub prismatic_target: f64,
    /// `target_displacement` and `rng_seed` are set per run.
    pub plan: PlanConfig,
}

impl Default for RefinementSettings {
    fn default() -> Self {
        Self {
            axis_perturbation_deg: 15.0,
            origin_offset_m: 0.05,
            revolute_target: std::f64::consts::FRAC_PI_2,
            prismatic_target: 0.2,
            plan: PlanConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Validation(format!("{field}: {msg}")));
        if self.n_scenes == 0 {
            return bad("n_scenes", "must be at least 1".into());
        }
        let [lo, hi] = self.parts_per_scene;
        if lo == 0 || lo > hi {
            return bad("parts_per_scene", format!("need 1 <= lo <= hi, got [{lo}, {hi}]"));
        }
        if self.n_points == 0 {
            return bad("n_points", "must be at least 1".into());
        }
        if self.recipe.kind_weights.iter().any(|w| !(*w >= 0.0)) || self.recipe.kind_weights.iter().sum::<f64>() <= 0.0 {
            return bad("recipe.kind_weights", "need nonnegative weights with a positive sum".into());
        }
        self.noise.validate().or_else(|e| bad("noise", e.to_string()))?;
        self.cluster.validate().or_else(|e| bad("cluster", e.to_string()))?;
        if let Some(r) = &self.refinement {
            if !(r.axis_perturbation_deg.is_finite() && r.origin_offset_m.is_finite()) {
                return bad("refinement", "perturbations must be finite".into());
            }
            r.plan.validate().or_else(|e| bad("refinement.plan", e.to_string()))?;
        }
        Ok(())
    }

    /// Parses a JSON config; syntax and schema errors report their line.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scene: u64,
    pub part_id: u32,
    pub joint_type: JointType,
    pub initial_axis_error_deg: f64,
    pub final_axis_error_deg: f64,
    /// `None` for prismatic parts.
    pub final_origin_error_m: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementReport {
    pub n_runs: usize,
    /// Fraction of runs whose final axis error is below the initial one.
    pub improved_fraction: f64,
    pub converged_fraction: f64,
    pub mean_initial_axis_error_deg: Option<f64>,
    pub mean_final_axis_error_deg: Option<f64>,
    pub mean_final_origin_error_m: Option<f64>,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub seed: u64,
    pub modeling: ModelingReport,
    pub refinement: Option<RefinementReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    /// Run logs keyed by file stem, e.g. `scene-0003-part-2`.
    pub run_logs: BTreeMap<String, RunLog>,
}

struct SceneOutcome {
    metrics: crate::metrics::SceneMetrics,
    runs: Vec<(RunSummary, RunLog)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn perturb(psi: &JointParams, tilt_deg: f64, offset: f64, rng: &mut ChaCha8Rng) -> Result<JointParams> {
    let (e1, e2) = perpendicular_basis(&psi.axis_dir);
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let axis_dir = rodrigues(&(e1 * a.cos() + e2 * a.sin()), tilt_deg.to_radians()) * psi.axis_dir;
    let origin = match psi.joint_type {
        JointType::Revolute => psi.origin + (e1 * b.cos() + e2 * b.sin()) * offset,
        JointType::Prismatic => psi.origin,
    };
    JointParams::new(axis_dir, origin, psi.joint_type)
}

fn refine_part(
    obj: &ArticulatedObject,
    scene: u64,
    part_id: u32,
    part_points: &[Vec3],
    estimate: &JointEstimate,
    settings: &RefinementSettings,
) -> Result<(RunSummary, RunLog)> {
    let part = obj.part(part_id)?.clone();
    let mut sim = obj.clone();
    let [lo, hi] = part.state_range;
    let closed: Vec<Vec3> = part_points
        .iter()
        .map(|p| {
            let rest = obj.to_rest(part_id, p)?;
            part.joint.apply(&rest, lo)
        })
        .collect::<Result<_>>()?;
    sim.set_joint_state(part_id, lo)?;

    let run_seed = scene ^ (u64::from(part_id) << 48);
    let mut rng = ChaCha8Rng::seed_from_u64(run_seed);
    let psi0 = perturb(&estimate.params, settings.axis_perturbation_deg, settings.origin_offset_m, &mut rng)?;
    let start = JointEstimate { params: psi0, ..*estimate };
    let grasp = propose_candidates(&closed, None, &start, 1)?[0];
    let target = match part.joint.joint_type {
        JointType::Revolute => settings.revolute_target,
        JointType::Prismatic => settings.prismatic_target,
    };
    let plan = PlanConfig { target_displacement: target.min(hi - lo), rng_seed: run_seed, ..settings.plan.clone() };
    let log = receding_horizon_run(&mut sim, part_id, &psi0, &grasp, &plan)?;
    let summary = RunSummary {
        scene,
        part_id,
        joint_type: part.joint.joint_type,
        initial_axis_error_deg: log.initial_axis_error_deg(),
        final_axis_error_deg: log.final_axis_error_deg(),
        final_origin_error_m: (part.joint.joint_type == JointType::Revolute).then(|| log.final_origin_error_m()),
        iterations: log.iterations.len(),
        converged: log.converged,
    };
    Ok((summary, log))
}

fn run_scene(config: &ExperimentConfig, scene: u64, n_parts: usize) -> Result<SceneOutcome> {
    let obj = config.recipe.random_object(scene, n_parts)?;
    let cloud = sample_cloud(&obj, config.n_points, scene)?;
    let gt_fields = ground_truth_fields(&cloud, &obj)?;
    let noise = NoiseModel { rng_seed: scene, ..config.noise };
    let corrupted = corrupt_fields(&gt_fields, &noise)?;
    let cloud = cloud.subset(&corrupted.kept);
    let fields = corrupted.fields;

    let seg = segment_parts(&cloud.points, &fields, &config.cluster)?;
    let mut estimates = BTreeMap::new();
    for (cluster, members) in seg.members().iter().enumerate() {
        let pts: Vec<Vec3> = members.iter().map(|&i| cloud.points[i]).collect();
        match vote_joint(&pts, &fields.subset(members), config.min_support) {
            Ok(e) => {
                estimates.insert(cluster as i32, e);
            }
            Err(Error::InsufficientSupport { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let gt = obj.parts().iter().map(|p| (p.part_id, p.joint)).collect();
    let scored = SceneEstimates { scene, cluster_id: seg.cluster_id.clone(), gt_part_id: cloud.part_id.clone(), estimates, gt };
    let metrics = evaluate_scene(&scored)?;

    let mut runs = Vec::new();
    if let Some(settings) = &config.refinement {
        for m in match_parts(&scored.cluster_id, &scored.gt_part_id)? {
            let Some(est) = scored.estimates.get(&m.cluster).filter(|_| m.iou >= AP_IOU) else { continue };
            let on_part: Vec<Vec3> = (0..cloud.len())
                .filter(|&i| scored.cluster_id[i] == m.cluster && cloud.part_id[i] == m.part_id)
                .map(|i| cloud.points[i])
                .collect();
            runs.push(refine_part(&obj, scene, m.part_id, &on_part, est, settings)?);
        }
        runs.sort_by_key(|(s, _)| s.part_id);
    }
    Ok(SceneOutcome { metrics, runs })
}

/// Scene seeds and part counts, drawn in order from the top-level seed.
pub fn scene_plan(config: &ExperimentConfig) -> Vec<(u64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let [lo, hi] = config.parts_per_scene;
    (0..config.n_scenes).map(|_| (rng.random::<u64>(), rng.random_range(lo..=hi))).collect()
}

/// Runs the whole batch. Scenes are processed in parallel and assembled in
/// plan order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let outcomes = scene_plan(config)
        .par_iter()
        .map(|&(scene, n_parts)| run_scene(config, scene, n_parts))
        .collect::<Result<Vec<_>>>()?;

    let mut metrics = Vec::with_capacity(outcomes.len());
    let mut summaries = Vec::new();
    let mut run_logs = BTreeMap::new();
    for (k, outcome) in outcomes.into_iter().enumerate() {
        metrics.push(outcome.metrics);
        for (summary, log) in outcome.runs {
            run_logs.insert(format!("scene-{k:04}-part-{}", summary.part_id), log);
            summaries.push(summary);
        }
    }
    let refinement = config.refinement.as_ref().map(|_| {
        let n = summaries.len();
        let frac = |pred: &dyn Fn(&RunSummary) -> bool| {
            if n == 0 { 0.0 } else { summaries.iter().filter(|s| pred(s)).count() as f64 / n as f64 }
        };
        RefinementReport {
            n_runs: n,
            improved_fraction: frac(&|s| s.final_axis_error_deg < s.initial_axis_error_deg),
            converged_fraction: frac(&|s| s.converged),
            mean_initial_axis_error_deg: mean(summaries.iter().map(|s| s.initial_axis_error_deg)),
            mean_final_axis_error_deg: mean(summaries.iter().map(|s| s.final_axis_error_deg)),
            mean_final_origin_error_m: mean(summaries.iter().filter_map(|s| s.final_origin_error_m)),
            runs: summaries,
        }
    });
    Ok(ExperimentOutput {
        report: ExperimentReport { format_version: 1, seed: config.seed, modeling: aggregate(metrics), refinement },
        run_logs,
    })
}

fn round_significant(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{:.*e}", digits - 1, x).parse().expect("formatted float parses")
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_significant(n.as_f64().expect("f64 number"), 9);
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(m) => {
            let mut entries: Vec<(String, Value)> = m.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect::<Map<_, _>>())
        }
        other => other,
    }
}

/// Pretty JSON with sorted keys and floats rounded to 9 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&canonicalize(serde_json::to_value(value)?))?;
    s.push('\n');
    Ok(s)
}

/// Writes `report.json` and `runs/<name>.json` under `out_dir`.
pub fn write_experiment(output: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("report.json"), canonical_json(&output.report)?)?;
    if !output.run_logs.is_empty() {
        let runs = out_dir.join("runs");
        std::fs::create_dir_all(&runs)?;
        for (name, log) in &output.run_logs {
            std::fs::write(runs.join(format!("{name}.json")), serde_json::to_string_pretty(log)?)?;
        }
    }
    Ok(())
}
