//! Receding-horizon manipulation: plan `L` contact-point waypoints under the
//! current estimate, execute the first `H` against the object's true joint,
//! refine the estimate from the executed waypoints and re-plan.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grasp::GraspCandidate;
use crate::kinematics::{axis_angular_error, axis_origin_error, signed_angle_about, JointParams, JointType, Vec3};
use crate::refine::{refine_segments, segments_objective, RefineConfig, Segment, SegmentPlan, TrackedPlan};
use crate::scene::ArticulatedObject;

/// Contact is lost when the grasp point is farther than this from the part.
pub const CONTACT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub waypoints: Vec<Vec3>,
    /// Joint displacement (radians or meters) of each waypoint.
    pub displacements: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Waypoints of `grasp_point` at `L` evenly spaced displacements from
/// `current` (exclusive) to `target` (inclusive) under `psi`.
pub fn plan_trajectory(psi: &JointParams, grasp_point: &Vec3, current: f64, target: f64, steps: usize) -> Result<Trajectory> {
    psi.validate()?;
    if steps == 0 {
        return Err(Error::Validation("a plan needs at least one step".into()));
    }
    if !(current.is_finite() && target.is_finite()) {
        return Err(Error::Validation("plan displacements must be finite".into()));
    }
    let mut out = Trajectory { waypoints: Vec::with_capacity(steps), displacements: Vec::with_capacity(steps) };
    for i in 1..=steps {
        let d = current + (target - current) * i as f64 / steps as f64;
        out.waypoints.push(psi.apply(grasp_point, d - current)?);
        out.displacements.push(d);
    }
    Ok(out)
}

/// Drives the object's true joint through the first `H` planned waypoints.
///
/// The gripper is rigidly attached at `grasp_point` (current world position
/// on part `part_id`). Each commanded waypoint is projected onto the true
/// one-parameter motion of that point: the joint moves to the displacement
/// bringing the contact closest to the waypoint, clamped to the joint limits.
/// The recorded positions carry isotropic Gaussian noise of `noise_sigma`.
pub fn execute_steps(
    sim: &mut ArticulatedObject,
    part_id: u32,
    grasp_point: &Vec3,
    planned: &Trajectory,
    executed: usize,
    noise_sigma: f64,
    rng_seed: u64,
) -> Result<Trajectory> {
    if executed > planned.len() {
        return Err(Error::Validation(format!("cannot execute {executed} of {} planned steps", planned.len())));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Validation(format!("execution noise must be >= 0, got {noise_sigma}")));
    }
    let gap = sim.distance_to_part(part_id, grasp_point)?;
    if gap > CONTACT_TOLERANCE {
        return Err(Error::ContactLost(format!("grasp point is {gap:.3e} m from part {part_id}")));
    }
    let part = sim.part(part_id)?.clone();
    let joint = part.joint;
    let [lo, hi] = part.state_range;
    let rest = sim.to_rest(part_id, grasp_point)?;
    let noise = Normal::new(0.0, noise_sigma).expect("sigma checked");
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut out = Trajectory::default();
    for w in planned.waypoints.iter().take(executed) {
        let state = sim.joint_state(part_id)?;
        let contact = sim.to_world(part_id, &rest)?;
        let step = match joint.joint_type {
            JointType::Revolute => signed_angle_about(&joint.axis_dir, &(contact - joint.origin), &(w - joint.origin)),
            JointType::Prismatic => (w - contact).dot(&joint.axis_dir),
        };
        let next = (state + step).clamp(lo, hi);
        sim.set_joint_state(part_id, next)?;
        let mut observed = sim.to_world(part_id, &rest)?;
        if noise_sigma > 0.0 {
            observed += Vec3::from_fn(|_, _| noise.sample(&mut rng));
        }
        out.waypoints.push(observed);
        out.displacements.push(next);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlanConfig {
    /// Steps per plan (`L`).
    #[serde(rename = "L")]
    pub plan_steps: usize,
    /// Executed steps per plan (`H < L`).
    #[serde(rename = "H")]
    pub executed_steps: usize,
    /// Joint displacement to achieve, relative to the starting state.
    pub target_displacement: f64,
    pub max_iterations: usize,
    pub execution_noise_sigma: f64,
    /// Converged when the objective falls below this, meters.
    pub convergence_tol: f64,
    /// Converged when the refined axis moves less than this, degrees.
    pub axis_update_tol_deg: f64,
    /// Target reached when the believed remaining displacement is below this.
    pub target_tol: f64,
    pub rng_seed: u64,
    pub refine: RefineConfig,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            plan_steps: 10,
            executed_steps: 3,
            target_displacement: std::f64::consts::FRAC_PI_2,
            max_iterations: 10,
            execution_noise_sigma: 0.0,
            convergence_tol: 1e-6,
            axis_update_tol_deg: 0.01,
            target_tol: 1e-4,
            rng_seed: 0,
            refine: RefineConfig::default(),
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.executed_steps >= 1 && self.executed_steps < self.plan_steps) {
            return Err(Error::Validation(format!(
                "need 1 <= H < L, got H={} L={}",
                self.executed_steps, self.plan_steps
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::Validation("max_iterations must be at least 1".into()));
        }
        if !self.target_displacement.is_finite() || !(self.execution_noise_sigma >= 0.0) {
            return Err(Error::Validation("target must be finite and noise nonnegative".into()));
        }
        self.refine.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub psi_estimate: JointParams,
    pub planned: Trajectory,
    pub actual: Trajectory,
    /// Trajectory objective at the accepted estimate, meters.
    pub objective: f64,
    pub axis_error_deg: f64,
    /// Origin error to the true axis, meters; 0 for prismatic joints.
    pub origin_error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub format_version: u32,
    pub part_id: u32,
    pub true_psi: JointParams,
    pub initial_psi: JointParams,
    pub grasp: GraspCandidate,
    pub iterations: Vec<IterationRecord>,
    pub final_psi: JointParams,
    pub converged: bool,
}

impl RunLog {
    pub fn initial_axis_error_deg(&self) -> f64 {
        axis_angular_error(&self.initial_psi.axis_dir, &self.true_psi.axis_dir).unwrap_or(f64::NAN)
    }

    pub fn final_axis_error_deg(&self) -> f64 {
        self.iterations.last().map_or_else(|| self.initial_axis_error_deg(), |r| r.axis_error_deg)
    }

    pub fn final_origin_error_m(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.origin_error_m)
    }
}

fn origin_error_or_zero(est: &JointParams, gt: &JointParams) -> f64 {
    axis_origin_error(est, gt).unwrap_or(0.0)
}

/// Displacement of `point` relative to `reference` under `psi`.
fn displacement_between(psi: &JointParams, reference: &Vec3, point: &Vec3) -> f64 {
    match psi.joint_type {
        JointType::Revolute => signed_angle_about(&psi.axis_dir, &(reference - psi.origin), &(point - psi.origin)),
        JointType::Prismatic => (point - reference).dot(&psi.axis_dir),
    }
}

/// Plan-execute-refine loop on part `part_id` of `sim`, starting from the
/// grasp candidate's point in the current state. Displacements are tracked
/// relative to the starting state.
pub fn receding_horizon_run(
    sim: &mut ArticulatedObject,
    part_id: u32,
    initial_psi: &JointParams,
    grasp: &GraspCandidate,
    config: &PlanConfig,
) -> Result<RunLog> {
    config.validate()?;
    initial_psi.validate()?;
    let true_psi = sim.part(part_id)?.joint;
    if initial_psi.joint_type != true_psi.joint_type {
        return Err(Error::Validation("initial estimate has the wrong joint type".into()));
    }
    let rest = sim.to_rest(part_id, &grasp.point)?;
    let start = grasp.point;
    let target = config.target_displacement;

    let mut psi = *initial_psi;
    let mut observed = start;
    let mut progress = 0.0;
    let mut segments: Vec<Segment> = Vec::new();
    let mut iterations = Vec::new();
    let mut converged = false;

    for t in 0..config.max_iterations {
        let planned = plan_trajectory(&psi, &observed, progress, target, config.plan_steps)?;
        let contact = sim.to_world(part_id, &rest)?;
        let actual = execute_steps(
            sim,
            part_id,
            &contact,
            &planned,
            config.executed_steps,
            config.execution_noise_sigma,
            config.rng_seed.wrapping_add(t as u64),
        )?;
        segments.push(Segment {
            actual: actual.waypoints.clone(),
            plan: SegmentPlan::Tracked(TrackedPlan {
                contact: observed,
                commanded: planned.waypoints.clone(),
            }),
        });

        let outcome = refine_segments(&psi, &segments, &config.refine)?;
        let axis_update = axis_angular_error(&psi.axis_dir, &outcome.psi.axis_dir)?;
        psi = outcome.psi;
        let objective = segments_objective(&psi, &segments)?;

        observed = *actual.waypoints.last().expect("H >= 1");
        progress = displacement_between(&psi, &start, &observed);

        iterations.push(IterationRecord {
            psi_estimate: psi,
            planned,
            actual,
            objective,
            axis_error_deg: axis_angular_error(&psi.axis_dir, &true_psi.axis_dir)?,
            origin_error_m: origin_error_or_zero(&psi, &true_psi),
        });

        if objective < config.convergence_tol
            || (t > 0 && axis_update < config.axis_update_tol_deg)
            || (target - progress).abs() < config.target_tol
        {
            converged = true;
            break;
        }
    }

    Ok(RunLog {
        format_version: 1,
        part_id,
        true_psi,
        initial_psi: *initial_psi,
        grasp: *grasp,
        iterations,
        final_psi: psi,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SceneRecipe;
    use crate::kinematics::{distance_to_line, perpendicular_basis, rodrigues};
    use crate::scene::{sample_cloud, BoxShape, ObjectSpec, PartSpec};
    use proptest::prelude::*;
    use rand::Rng;

    fn close(a: &Vec3, b: &Vec3, tol: f64) -> bool {
        (a - b).norm() < tol
    }

    #[test]
    fn plan_examples() {
        let z = JointParams::revolute(Vec3::z(), Vec3::zeros()).unwrap();
        let t = plan_trajectory(&z, &Vec3::x(), 0.0, std::f64::consts::FRAC_PI_2, 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(close(&t.waypoints[0], &Vec3::new(h, h, 0.0), 1e-12));
        assert!(close(&t.waypoints[1], &Vec3::y(), 1e-12));

        let x = JointParams::prismatic(Vec3::x(), Vec3::zeros()).unwrap();
        let t = plan_trajectory(&x, &Vec3::zeros(), 0.0, 0.4, 4).unwrap();
        for (i, w) in t.waypoints.iter().enumerate() {
            assert!(close(w, &Vec3::new(0.1 * (i + 1) as f64, 0.0, 0.0), 1e-12));
        }

        let t = plan_trajectory(&z, &Vec3::x(), 0.3, 1.0, 1).unwrap();
        assert_eq!(t.displacements, vec![1.0]);
        assert!(close(&t.waypoints[0], &z.apply(&Vec3::x(), 0.7).unwrap(), 1e-12));

        let t = plan_trajectory(&z, &Vec3::x(), 0.5, 0.5, 3).unwrap();
        assert!(t.waypoints.iter().all(|w| close(w, &Vec3::x(), 1e-15)));
        assert!(plan_trajectory(&z, &Vec3::x(), 0.0, 1.0, 0).is_err());
        let bad = JointParams { axis_dir: Vec3::new(0.0, 0.0, 2.0), ..z };
        assert!(plan_trajectory(&bad, &Vec3::x(), 0.0, 1.0, 3).is_err());
    }

    proptest! {
        #[test]
        fn planned_waypoints_stay_on_the_motion(
            u in prop::array::uniform3(-1.0..1.0f64),
            q in prop::array::uniform3(-1.0..1.0f64),
            p in prop::array::uniform3(-1.0..1.0f64),
            current in -1.0..1.0f64,
            target in -3.0..3.0f64,
            steps in 1usize..20,
        ) {
            let u = Vec3::from(u);
            prop_assume!(u.norm() > 0.1);
            let (q, p) = (Vec3::from(q), Vec3::from(p));
            let rev = JointParams::revolute(u.normalize(), q).unwrap();
            let t = plan_trajectory(&rev, &p, current, target, steps).unwrap();
            let r = distance_to_line(&p, &q, &rev.axis_dir);
            prop_assert_eq!(t.len(), steps);
            for w in &t.waypoints {
                prop_assert!((distance_to_line(w, &q, &rev.axis_dir) - r).abs() < 1e-9);
            }
            let ds = &t.displacements;
            prop_assert!(ds.windows(2).all(|w| (w[1] - w[0]) * (target - current) >= 0.0));

            let pri = JointParams::prismatic(u.normalize(), q).unwrap();
            let t = plan_trajectory(&pri, &p, current, target, steps).unwrap();
            for w in &t.waypoints {
                prop_assert!((w - p).cross(&pri.axis_dir).norm() < 1e-9);
            }
        }
    }

    /// A door hinged on the z axis through the origin and a grasp on its far edge.
    fn door(range: [f64; 2]) -> (ArticulatedObject, Vec3) {
        let spec = ObjectSpec {
            static_shape: BoxShape::new(Vec3::new(-0.3, -0.3, 0.0), Vec3::new(0.25, 0.25, 0.5)),
            parts: vec![PartSpec {
                part_id: 1,
                joint: JointParams::revolute(Vec3::z(), Vec3::zeros()).unwrap(),
                shape: BoxShape::new(Vec3::new(0.01, 0.25, 0.0), Vec3::new(0.01, 0.25, 0.4)),
                state_range: range,
            }],
            rng_seed: 0,
        };
        (ArticulatedObject::build(spec).unwrap(), Vec3::new(0.02, 0.5, 0.1))
    }

    #[test]
    fn execution_reproduces_a_consistent_plan() {
        let (mut sim, grasp) = door([0.0, 2.0]);
        let truth = sim.part(1).unwrap().joint;
        let plan = plan_trajectory(&truth, &grasp, 0.0, 1.5, 6).unwrap();
        let actual = execute_steps(&mut sim, 1, &grasp, &plan, 6, 0.0, 0).unwrap();
        for (a, p) in actual.waypoints.iter().zip(&plan.waypoints) {
            assert!(close(a, p, 1e-9));
        }
        assert!((sim.joint_state(1).unwrap() - 1.5).abs() < 1e-9);
    }

    #[test]
    fn tilted_model_deviation_grows_along_the_plan() {
        let (mut sim, grasp) = door([0.0, 2.0]);
        let truth = sim.part(1).unwrap().joint;
        let tilt = rodrigues(&Vec3::x(), 10f64.to_radians()) * truth.axis_dir;
        let psi = JointParams { axis_dir: tilt, ..truth };
        let plan = plan_trajectory(&psi, &grasp, 0.0, 1.2, 6).unwrap();
        let actual = execute_steps(&mut sim, 1, &grasp, &plan, 6, 0.0, 0).unwrap();
        let dev: Vec<f64> = actual.waypoints.iter().zip(&plan.waypoints).map(|(a, p)| (a - p).norm()).collect();
        assert!(dev[0] > 0.0);
        assert!(dev.windows(2).all(|w| w[1] > w[0]), "{dev:?}");
    }

    #[test]
    fn execution_clamps_at_limits() {
        let (mut sim, grasp) = door([0.0, 0.5]);
        let truth = sim.part(1).unwrap().joint;
        let plan = plan_trajectory(&truth, &grasp, 0.0, 1.0, 5).unwrap();
        let actual = execute_steps(&mut sim, 1, &grasp, &plan, 5, 0.0, 0).unwrap();
        assert_eq!(&actual.displacements[2..], &[0.5, 0.5, 0.5]);
        assert!(close(&actual.waypoints[3], &actual.waypoints[4], 1e-12));
        assert!(close(&actual.waypoints[2], &truth.apply(&grasp, 0.5).unwrap(), 1e-9));
    }

    #[test]
    fn execution_errors() {
        let (mut sim, grasp) = door([0.0, 2.0]);
        let truth = sim.part(1).unwrap().joint;
        let plan = plan_trajectory(&truth, &grasp, 0.0, 1.0, 3).unwrap();
        let off = grasp + Vec3::new(0.1, 0.0, 0.0);
        assert!(matches!(execute_steps(&mut sim, 1, &off, &plan, 2, 0.0, 0), Err(Error::ContactLost(_))));
        assert!(execute_steps(&mut sim, 1, &grasp, &plan, 4, 0.0, 0).is_err());
        assert!(execute_steps(&mut sim, 1, &grasp, &plan, 2, -1.0, 0).is_err());
        assert!(execute_steps(&mut sim, 9, &grasp, &plan, 2, 0.0, 0).is_err());
        assert_eq!(sim.joint_state(1).unwrap(), 0.0);
    }

    #[test]
    fn noisy_execution_is_seeded() {
        let run = |seed| {
            let (mut sim, grasp) = door([0.0, 2.0]);
            let truth = sim.part(1).unwrap().joint;
            let plan = plan_trajectory(&truth, &grasp, 0.0, 1.0, 4).unwrap();
            execute_steps(&mut sim, 1, &grasp, &plan, 4, 0.002, seed).unwrap()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn config_validation_and_serde_names() {
        assert!(PlanConfig::default().validate().is_ok());
        assert!(PlanConfig { executed_steps: 10, ..Default::default() }.validate().is_err());
        assert!(PlanConfig { executed_steps: 0, ..Default::default() }.validate().is_err());
        assert!(PlanConfig { max_iterations: 0, ..Default::default() }.validate().is_err());
        let json = serde_json::to_value(PlanConfig::default()).unwrap();
        assert_eq!(json["L"], 10);
        assert_eq!(json["H"], 3);
        let c: PlanConfig = serde_json::from_str(r#"{"L": 6, "H": 2}"#).unwrap();
        assert_eq!((c.plan_steps, c.executed_steps, c.max_iterations), (6, 2, 10));
    }

    fn grasp_for(sim: &ArticulatedObject, part_id: u32, psi: &JointParams) -> GraspCandidate {
        let cloud = sample_cloud(sim, 2048, 1).unwrap();
        let pts: Vec<Vec3> = cloud.part_indices(part_id).into_iter().map(|i| cloud.points[i]).collect();
        let est = crate::voting::JointEstimate { params: *psi, support: pts.len(), direction_dispersion: 0.0, origin_rms: 0.0 };
        crate::grasp::propose_candidates(&pts, None, &est, 1).unwrap()[0]
    }

    /// A generated door with its axis tilted by `tilt_deg` and origin moved by
    /// `shift` meters, both in random perpendicular directions.
    fn perturbed_door(seed: u64, tilt_deg: f64, shift: f64) -> (ArticulatedObject, JointParams) {
        let recipe = SceneRecipe { kind_weights: [1.0, 0.0, 0.0], ..Default::default() };
        let sim = ArticulatedObject::build(recipe.object_spec(seed, 1)).unwrap();
        let truth = sim.parts()[0].joint;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let (e1, e2) = perpendicular_basis(&truth.axis_dir);
        let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let b: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let u = rodrigues(&(e1 * a.cos() + e2 * a.sin()), tilt_deg.to_radians()) * truth.axis_dir;
        let psi = JointParams::revolute(u.normalize(), truth.origin + (e1 * b.cos() + e2 * b.sin()) * shift).unwrap();
        (sim, psi)
    }

    #[test]
    fn true_model_converges_in_one_cycle() {
        let (mut sim, _) = perturbed_door(3, 0.0, 0.0);
        let truth = sim.parts()[0].joint;
        let grasp = grasp_for(&sim, 1, &truth);
        let log = receding_horizon_run(&mut sim, 1, &truth, &grasp, &PlanConfig::default()).unwrap();
        assert_eq!(log.iterations.len(), 1);
        assert!(log.converged);
        assert!(log.iterations[0].objective < 1e-12);
        assert_eq!(log.format_version, 1);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let (mut sim, psi0) = perturbed_door(4, 15.0, 0.05);
        let grasp = grasp_for(&sim, 1, &psi0);
        let config = PlanConfig { max_iterations: 1, execution_noise_sigma: 0.002, ..Default::default() };
        let log = receding_horizon_run(&mut sim, 1, &psi0, &grasp, &config).unwrap();
        assert_eq!(log.iterations.len(), 1);
        assert!(!log.converged);
    }

    #[test]
    fn fifteen_degree_start_converges() {
        let (mut sim, psi0) = perturbed_door(5, 15.0, 0.0);
        let grasp = grasp_for(&sim, 1, &psi0);
        let log = receding_horizon_run(&mut sim, 1, &psi0, &grasp, &PlanConfig::default()).unwrap();
        assert!((log.initial_axis_error_deg() - 15.0).abs() < 1e-9);
        assert!(log.final_axis_error_deg() < 1.0);
        assert!(log.iterations.len() <= 10);
        assert_eq!(log.final_psi, log.iterations.last().unwrap().psi_estimate);
        let json = serde_json::to_string(&log).unwrap();
        assert_eq!(serde_json::from_str::<RunLog>(&json).unwrap(), log);
    }

    #[test]
    fn run_rejects_mismatched_type_and_bad_config() {
        let (mut sim, psi0) = perturbed_door(6, 5.0, 0.0);
        let grasp = grasp_for(&sim, 1, &psi0);
        let pri = JointParams { joint_type: JointType::Prismatic, ..psi0 };
        assert!(receding_horizon_run(&mut sim, 1, &pri, &grasp, &PlanConfig::default()).is_err());
        let bad = PlanConfig { executed_steps: 12, ..Default::default() };
        assert!(receding_horizon_run(&mut sim, 1, &psi0, &grasp, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn noiseless_runs_have_monotone_objectives(seed in 0u64..100_000, tilt in 2.0..20.0f64, shift in 0.0..0.06f64) {
            let (mut sim, psi0) = perturbed_door(seed, tilt, shift);
            let grasp = grasp_for(&sim, 1, &psi0);
            let [lo, hi] = sim.parts()[0].state_range;
            let config = PlanConfig { max_iterations: 6, ..Default::default() };
            let log = receding_horizon_run(&mut sim, 1, &psi0, &grasp, &config).unwrap();
            prop_assert!(log.iterations.len() <= 6);
            let obj: Vec<f64> = log.iterations.iter().map(|r| r.objective).collect();
            prop_assert!(obj.iter().all(|o| *o >= 0.0));
            prop_assert!(obj.windows(2).all(|w| w[1] <= w[0]), "{:?}", obj);
            for r in &log.iterations {
                prop_assert!(r.actual.displacements.iter().all(|d| (lo..=hi).contains(d)));
            }
        }
    }
}
