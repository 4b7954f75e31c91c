//! Joint-parameter refinement from executed trajectories.
//!
//! Actual waypoints are matched to waypoints re-planned under a candidate
//! `ψ` with a rectangular Hungarian assignment; the matched mean distance is
//! the objective. Refinement alternates between fixing the assignment and
//! descending the matched cost along its finite-difference gradient,
//! preconditioned by a reweighted Gauss-Newton matrix, with backtracking so
//! no accepted step increases the objective.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{perpendicular_basis, rodrigues, signed_angle_about, JointParams, JointType, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(row, column)` pairs sorted by row; one per row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Minimum-cost assignment of every row of `cost` to a distinct column
/// (shortest augmenting paths with potentials, O(H²L)).
fn solve_assignment(cost: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> (Vec<usize>, f64) {
    let (n, m) = (rows.len(), cols.len());
    debug_assert!(n <= m);
    let a = |i: usize, j: usize| cost[rows[i - 1]][cols[j - 1]];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of_row[p[j] - 1] = j - 1;
        }
    }
    let total = (0..n).map(|i| cost[rows[i]][cols[col_of_row[i]]]).sum();
    (col_of_row, total)
}

/// Rectangular assignment with `rows ≤ columns`. Among optimal assignments
/// the lexicographically smallest column sequence is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment> {
    let h = cost.len();
    let l = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != l) {
        return Err(Error::Validation("cost matrix rows have different lengths".into()));
    }
    if h > l {
        return Err(Error::Validation(format!("assignment needs rows <= columns, got {h} x {l}")));
    }
    if cost.iter().flatten().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::Validation("costs must be finite and nonnegative".into()));
    }
    if h == 0 {
        return Ok(Assignment { pairs: Vec::new(), total_cost: 0.0 });
    }
    let all_rows: Vec<usize> = (0..h).collect();
    let all_cols: Vec<usize> = (0..l).collect();
    let (_, best) = solve_assignment(cost, &all_rows, &all_cols);
    let tol = 1e-12 * (1.0 + best.abs());

    // Fix rows in order, each to the smallest column that still admits an
    // optimal completion.
    let mut pairs = Vec::with_capacity(h);
    let mut fixed = 0.0;
    let mut free_cols = all_cols;
    for row in 0..h {
        let rest_rows: Vec<usize> = (row + 1..h).collect();
        let choice = free_cols
            .iter()
            .enumerate()
            .find_map(|(k, &col)| {
                let mut cols = free_cols.clone();
                cols.remove(k);
                let (_, rest) = solve_assignment(cost, &rest_rows, &cols);
                (fixed + cost[row][col] + rest <= best + tol).then_some(k)
            })
            .unwrap_or(0);
        let col = free_cols.remove(choice);
        fixed += cost[row][col];
        pairs.push((row, col));
    }
    let total_cost = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    Ok(Assignment { pairs, total_cost })
}

/// What is needed to regenerate a plan under another `ψ`: the contact point
/// at plan time, the joint displacement it was at, and the commanded
/// displacements of each waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanTemplate {
    pub grasp_point: Vec3,
    pub current: f64,
    pub displacements: Vec<f64>,
}

impl PlanTemplate {
    pub fn waypoints(&self, psi: &JointParams) -> Result<Vec<Vec3>> {
        self.displacements
            .iter()
            .map(|d| psi.apply(&self.grasp_point, d - self.current))
            .collect()
    }
}

/// Commanded waypoints of an executed plan with the contact point they were
/// tracked from. Under a candidate `ψ` each waypoint is reached by moving
/// the contact along `ψ` to the displacement closest to it, the same
/// tracking model the executor applies to the true joint. Under the `ψ` that
/// produced the plan this reproduces the commanded waypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPlan {
    pub contact: Vec3,
    pub commanded: Vec<Vec3>,
}

impl TrackedPlan {
    /// The plan `template` commanded when it was generated under `psi`.
    pub fn commanded_by(template: &PlanTemplate, psi: &JointParams) -> Result<Self> {
        Ok(Self { contact: template.grasp_point, commanded: template.waypoints(psi)? })
    }

    fn waypoint(&self, psi: &JointParams, l: usize) -> Vec3 {
        let w = &self.commanded[l];
        let c = &self.contact;
        match psi.joint_type {
            JointType::Revolute => {
                let theta = signed_angle_about(&psi.axis_dir, &(c - psi.origin), &(w - psi.origin));
                psi.origin + rodrigues(&psi.axis_dir, theta) * (c - psi.origin)
            }
            JointType::Prismatic => c + psi.axis_dir * (w - c).dot(&psi.axis_dir),
        }
    }

    pub fn waypoints(&self, psi: &JointParams) -> Vec<Vec3> {
        (0..self.commanded.len()).map(|l| self.waypoint(psi, l)).collect()
    }
}

/// How the planned waypoints of a segment are regenerated under `ψ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentPlan {
    /// At the commanded displacements.
    Replanned(PlanTemplate),
    /// By tracking the commanded waypoints.
    Tracked(TrackedPlan),
}

impl SegmentPlan {
    fn len(&self) -> usize {
        match self {
            SegmentPlan::Replanned(t) => t.displacements.len(),
            SegmentPlan::Tracked(t) => t.commanded.len(),
        }
    }

    fn waypoint(&self, psi: &JointParams, l: usize) -> Vec3 {
        match self {
            SegmentPlan::Replanned(t) => {
                psi.apply(&t.grasp_point, t.displacements[l] - t.current).expect("chart keeps the axis unit")
            }
            SegmentPlan::Tracked(t) => t.waypoint(psi, l),
        }
    }

    pub fn waypoints(&self, psi: &JointParams) -> Result<Vec<Vec3>> {
        psi.validate()?;
        Ok((0..self.len()).map(|l| self.waypoint(psi, l)).collect())
    }
}

fn cost_matrix(actual: &[Vec3], planned: &[Vec3]) -> Vec<Vec<f64>> {
    actual.iter().map(|a| planned.iter().map(|p| (a - p).norm()).collect()).collect()
}

/// Mean matched distance between actual waypoints and the plan regenerated
/// under `psi`, with the optimal matching.
pub fn trajectory_objective(psi: &JointParams, actual: &[Vec3], template: &PlanTemplate) -> Result<(f64, Assignment)> {
    plan_objective(psi, actual, &SegmentPlan::Replanned(template.clone()))
}

/// [`trajectory_objective`] for either kind of segment plan.
pub fn plan_objective(psi: &JointParams, actual: &[Vec3], plan: &SegmentPlan) -> Result<(f64, Assignment)> {
    if actual.is_empty() || plan.len() == 0 {
        return Err(Error::Validation("trajectory objective needs nonempty trajectories".into()));
    }
    if actual.len() > plan.len() {
        return Err(Error::Validation(format!(
            "{} actual waypoints cannot be matched to {} planned ones",
            actual.len(),
            plan.len()
        )));
    }
    let planned = plan.waypoints(psi)?;
    let cost = cost_matrix(actual, &planned);
    let assignment = hungarian(&cost)?;
    Ok((assignment.total_cost / actual.len() as f64, assignment))
}

/// Same value as [`plan_objective`] without the lexicographic tie-break.
fn plan_objective_fast(psi: &JointParams, actual: &[Vec3], plan: &SegmentPlan) -> Result<(f64, Assignment)> {
    if actual.is_empty() || actual.len() > plan.len() {
        return plan_objective(psi, actual, plan);
    }
    let planned = plan.waypoints(psi)?;
    let cost = cost_matrix(actual, &planned);
    let rows: Vec<usize> = (0..actual.len()).collect();
    let cols: Vec<usize> = (0..planned.len()).collect();
    let (col_of_row, total_cost) = solve_assignment(&cost, &rows, &cols);
    let assignment = Assignment { pairs: col_of_row.into_iter().enumerate().collect(), total_cost };
    Ok((total_cost / actual.len() as f64, assignment))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// First trial step along the preconditioned direction; halved on
    /// rejection.
    pub step_size: f64,
    pub max_inner_iterations: usize,
    /// Central finite-difference step.
    pub grad_epsilon: f64,
    /// Stop when an alternation improves the objective by less than this.
    pub tolerance: f64,
    pub max_alternations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { step_size: 1.0, max_inner_iterations: 200, grad_epsilon: 1e-7, tolerance: 1e-10, max_alternations: 20 }
    }
}

/// Smallest backtracking step before giving up on a direction.
pub const MIN_STEP: f64 = 1e-6;

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step_size > 0.0
            && self.max_inner_iterations > 0
            && self.grad_epsilon > 0.0
            && self.tolerance > 0.0
            && self.max_alternations > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("refine config values must be positive: {self:?}")))
        }
    }
}

/// Actual waypoints of one executed segment with the plan they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub actual: Vec<Vec3>,
    pub plan: SegmentPlan,
}

/// Objective over several segments: each is matched within itself and the
/// per-segment values are averaged.
pub fn segments_objective(psi: &JointParams, segments: &[Segment]) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::Validation("no trajectory segments".into()));
    }
    let mut total = 0.0;
    for s in segments {
        total += plan_objective(psi, &s.actual, &s.plan)?.0;
    }
    Ok(total / segments.len() as f64)
}

/// Local chart around a base `ψ`: tangent-plane offsets of the axis and,
/// for revolute joints, in-plane offsets of the origin.
struct Chart {
    base: JointParams,
    e1: Vec3,
    e2: Vec3,
}

impl Chart {
    fn new(base: JointParams) -> Self {
        let (e1, e2) = perpendicular_basis(&base.axis_dir);
        Self { base, e1, e2 }
    }

    fn dof(&self) -> usize {
        match self.base.joint_type {
            JointType::Revolute => 4,
            JointType::Prismatic => 2,
        }
    }

    fn point(&self, x: &[f64]) -> JointParams {
        let u = (self.base.axis_dir + self.e1 * x[0] + self.e2 * x[1]).normalize();
        let q = match self.base.joint_type {
            JointType::Revolute => self.base.origin + self.e1 * x[2] + self.e2 * x[3],
            JointType::Prismatic => self.base.origin,
        };
        JointParams { axis_dir: u, origin: q, joint_type: self.base.joint_type }
    }
}

/// Matched residuals `actual - planned` of every segment under fixed
/// assignments, each with its weight in the objective.
fn matched_residuals(psi: &JointParams, segments: &[Segment], assignments: &[Assignment]) -> Vec<(f64, Vec3)> {
    let mut out = Vec::new();
    for (s, a) in segments.iter().zip(assignments) {
        let w = 1.0 / (s.actual.len() * segments.len()) as f64;
        out.extend(a.pairs.iter().map(|&(h, l)| (w, s.actual[h] - s.plan.waypoint(psi, l))));
    }
    out
}

fn matched_cost(psi: &JointParams, segments: &[Segment], assignments: &[Assignment]) -> f64 {
    matched_residuals(psi, segments, assignments).iter().map(|(w, r)| w * r.norm()).sum()
}

/// Descent direction for the matched cost: the gradient preconditioned by
/// the reweighted Gauss-Newton matrix `Σ w/‖r‖ JᵀJ`, or the plain gradient
/// when that matrix is singular.
fn descent_direction(
    chart: &Chart,
    segments: &[Segment],
    assignments: &[Assignment],
    h: f64,
) -> (Vector4<f64>, Vector4<f64>) {
    let dof = chart.dof();
    let base = matched_residuals(&chart.base, segments, assignments);
    let mut grad = Vector4::zeros();
    let mut jac = vec![[Vec3::zeros(); 4]; base.len()];
    let mut x = [0.0; 4];
    for k in 0..dof {
        x[k] = h;
        let plus = matched_residuals(&chart.point(&x), segments, assignments);
        x[k] = -h;
        let minus = matched_residuals(&chart.point(&x), segments, assignments);
        x[k] = 0.0;
        for (i, ((w, rp), (_, rm))) in plus.iter().zip(&minus).enumerate() {
            grad[k] += w * (rp.norm() - rm.norm()) / (2.0 * h);
            jac[i][k] = (rp - rm) / (2.0 * h);
        }
    }
    let mut metric = Matrix4::zeros();
    for ((w, r), j) in base.iter().zip(&jac) {
        let weight = w / r.norm().max(1e-12);
        for a in 0..dof {
            for b in 0..dof {
                metric[(a, b)] += weight * j[a].dot(&j[b]);
            }
        }
    }
    for k in dof..4 {
        metric[(k, k)] = 1.0;
    }
    let ridge = 1e-12 * metric.trace() / dof as f64;
    let direction = (metric + Matrix4::identity() * ridge)
        .cholesky()
        .map(|c| c.solve(&grad))
        .filter(|d| d.dot(&grad) > 0.0 && d.iter().all(|v| v.is_finite()))
        .unwrap_or(grad);
    (grad, direction)
}

fn assignments(psi: &JointParams, segments: &[Segment]) -> Result<(f64, Vec<Assignment>)> {
    let mut total = 0.0;
    let mut out = Vec::with_capacity(segments.len());
    for s in segments {
        let (value, a) = plan_objective_fast(psi, &s.actual, &s.plan)?;
        total += value;
        out.push(a);
    }
    Ok((total / segments.len() as f64, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub psi: JointParams,
    pub initial_objective: f64,
    pub objective: f64,
    pub alternations: usize,
    pub gradient_steps: usize,
}

/// Refines `psi0` against several executed segments. The joint type is kept;
/// the returned objective never exceeds the initial one.
pub fn refine_segments(psi0: &JointParams, segments: &[Segment], config: &RefineConfig) -> Result<RefineOutcome> {
    config.validate()?;
    psi0.validate()?;
    let (initial, mut matches) = assignments(psi0, segments)?;
    let mut psi = *psi0;
    let mut best = psi;
    let mut current = initial;
    let mut alternations = 0;
    let mut gradient_steps = 0;

    while alternations < config.max_alternations {
        alternations += 1;
        let mut value = matched_cost(&psi, segments, &matches);
        for _ in 0..config.max_inner_iterations {
            let chart = Chart::new(psi);
            let (grad, direction) = descent_direction(&chart, segments, &matches, config.grad_epsilon);
            if grad.iter().all(|g| *g == 0.0) {
                break;
            }
            let mut step = config.step_size;
            let mut accepted = None;
            while step >= MIN_STEP {
                let x = direction * -step;
                let candidate = chart.point(x.as_slice());
                let trial = matched_cost(&candidate, segments, &matches);
                if trial < value {
                    accepted = Some((candidate, trial));
                    break;
                }
                step *= 0.5;
            }
            let Some((candidate, trial)) = accepted else { break };
            gradient_steps += 1;
            let gain = value - trial;
            psi = candidate;
            value = trial;
            if gain < config.tolerance {
                break;
            }
        }
        let (rematched, next) = assignments(&psi, segments)?;
        if rematched > current {
            break;
        }
        let gain = current - rematched;
        best = psi;
        current = rematched;
        matches = next;
        if gain < config.tolerance {
            break;
        }
    }

    Ok(RefineOutcome { psi: best, initial_objective: initial, objective: current, alternations, gradient_steps })
}

/// Refines `psi0` against one segment executed from the plan `template`
/// generated under `psi0`. The plan is regenerated under candidates by
/// tracking its commanded waypoints, so at `psi0` the objective equals
/// [`trajectory_objective`].
pub fn refine_parameters(
    psi0: &JointParams,
    actual: &[Vec3],
    template: &PlanTemplate,
    config: &RefineConfig,
) -> Result<JointParams> {
    let plan = SegmentPlan::Tracked(TrackedPlan::commanded_by(template, psi0)?);
    let segment = Segment { actual: actual.to_vec(), plan };
    Ok(refine_segments(psi0, std::slice::from_ref(&segment), config)?.psi)
}
