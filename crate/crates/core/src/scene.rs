//! Parametric articulated objects, labeled point-cloud sampling and the
//! per-point articulation fields (segmentation, offset, projection, axis).
//!
//! Objects are a static box with K ≥ 1 movable boxes, each rigidly attached
//! to a one-DOF joint. Part shapes are given in the rest pose (zero joint
//! displacement); the current pose follows from the per-part joint state.

use std::collections::{BTreeMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{perpendicular_basis, project_point_to_axis, rodrigues, JointParams, JointType, Vec3};

/// Axis direction written for static points; never consumed downstream.
pub const STATIC_AXIS_SENTINEL: Vec3 = Vec3::new(0.0, 0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantic {
    Static = 0,
    Revolute = 1,
    Prismatic = 2,
}

impl Semantic {
    pub const ALL: [Semantic; 3] = [Semantic::Static, Semantic::Revolute, Semantic::Prismatic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn of_joint(t: JointType) -> Self {
        match t {
            JointType::Revolute => Semantic::Revolute,
            JointType::Prismatic => Semantic::Prismatic,
        }
    }

    pub fn joint_type(self) -> Option<JointType> {
        match self {
            Semantic::Static => None,
            Semantic::Revolute => Some(JointType::Revolute),
            Semantic::Prismatic => Some(JointType::Prismatic),
        }
    }

    pub fn is_movable(self) -> bool {
        self != Semantic::Static
    }
}

/// Axis-aligned box, meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxShape {
    pub center: Vec3,
    pub half_extents: Vec3,
}

impl BoxShape {
    pub fn new(center: Vec3, half_extents: Vec3) -> Self {
        Self { center, half_extents }
    }

    fn validate(&self, what: &str) -> Result<()> {
        if !self.half_extents.iter().all(|h| h.is_finite() && *h > 0.0)
            || !self.center.iter().all(|c| c.is_finite())
        {
            return Err(Error::Validation(format!("{what}: half-extents must be positive and finite")));
        }
        Ok(())
    }

    /// The six faces as (area, axis index, sign).
    fn faces(&self) -> impl Iterator<Item = (f64, usize, f64)> + '_ {
        let h = self.half_extents;
        (0..3).flat_map(move |axis| {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            let area = 4.0 * h[a] * h[b];
            [(area, axis, 1.0), (area, axis, -1.0)]
        })
    }

    pub fn surface_area(&self) -> f64 {
        self.faces().map(|f| f.0).sum()
    }

    /// Distance from `p` to the closed box (0 inside).
    pub fn distance(&self, p: &Vec3) -> f64 {
        let d = (p - self.center).abs() - self.half_extents;
        d.map(|c| c.max(0.0)).norm()
    }

    fn sample_face<R: Rng>(&self, axis: usize, sign: f64, rng: &mut R) -> (Vec3, Vec3) {
        let mut p = self.center;
        let mut n = Vec3::zeros();
        n[axis] = sign;
        p[axis] += sign * self.half_extents[axis];
        for k in [(axis + 1) % 3, (axis + 2) % 3] {
            let h = self.half_extents[k];
            p[k] += rng.random_range(-h..=h);
        }
        (p, n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartSpec {
    pub part_id: u32,
    pub joint: JointParams,
    pub shape: BoxShape,
    /// Displacement limits `[lo, hi]`, radians or meters.
    pub state_range: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub static_shape: BoxShape,
    pub parts: Vec<PartSpec>,
    pub rng_seed: u64,
}

impl ObjectSpec {
    pub fn validate(&self) -> Result<()> {
        self.static_shape.validate("static shape")?;
        if self.parts.is_empty() {
            return Err(Error::Validation("object needs at least one movable part".into()));
        }
        let mut seen = HashSet::new();
        for part in &self.parts {
            if part.part_id == 0 {
                return Err(Error::Validation("part_id 0 is reserved for the static body".into()));
            }
            if !seen.insert(part.part_id) {
                return Err(Error::Validation(format!("duplicate part_id {}", part.part_id)));
            }
            part.shape.validate(&format!("part {}", part.part_id))?;
            part.joint.validate()?;
            let [lo, hi] = part.state_range;
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Validation(format!(
                    "part {}: state range [{lo}, {hi}] must satisfy lo <= hi",
                    part.part_id
                )));
            }
        }
        Ok(())
    }
}

/// An object with mutable per-part joint state.
#[derive(Debug, Clone, PartialEq)]
pub struct ArticulatedObject {
    spec: ObjectSpec,
    state: Vec<f64>,
}

impl ArticulatedObject {
    /// Validates `spec` and initializes every joint at its lower limit.
    pub fn build(spec: ObjectSpec) -> Result<Self> {
        spec.validate()?;
        let state = spec.parts.iter().map(|p| p.state_range[0]).collect();
        Ok(Self { spec, state })
    }

    pub fn spec(&self) -> &ObjectSpec {
        &self.spec
    }

    pub fn num_parts(&self) -> usize {
        self.spec.parts.len()
    }

    pub fn parts(&self) -> &[PartSpec] {
        &self.spec.parts
    }

    fn slot(&self, part_id: u32) -> Result<usize> {
        self.spec
            .parts
            .iter()
            .position(|p| p.part_id == part_id)
            .ok_or_else(|| Error::Validation(format!("unknown part_id {part_id}")))
    }

    pub fn part(&self, part_id: u32) -> Result<&PartSpec> {
        Ok(&self.spec.parts[self.slot(part_id)?])
    }

    pub fn joint_state(&self, part_id: u32) -> Result<f64> {
        Ok(self.state[self.slot(part_id)?])
    }

    /// Moves a part to `displacement`, which must lie within its limits.
    pub fn set_joint_state(&mut self, part_id: u32, displacement: f64) -> Result<()> {
        let slot = self.slot(part_id)?;
        let [lo, hi] = self.spec.parts[slot].state_range;
        if !(displacement >= lo && displacement <= hi) {
            return Err(Error::JointLimit { part_id, value: displacement, lo, hi });
        }
        self.state[slot] = displacement;
        Ok(())
    }

    /// Maps a rest-pose point of the part to its current world position.
    pub fn to_world(&self, part_id: u32, rest: &Vec3) -> Result<Vec3> {
        let slot = self.slot(part_id)?;
        self.spec.parts[slot].joint.apply(rest, self.state[slot])
    }

    /// Maps a current world point back into the part's rest pose.
    pub fn to_rest(&self, part_id: u32, world: &Vec3) -> Result<Vec3> {
        let slot = self.slot(part_id)?;
        self.spec.parts[slot].joint.apply(world, -self.state[slot])
    }

    /// Distance of a world point to the part's surface box in its current pose.
    pub fn distance_to_part(&self, part_id: u32, world: &Vec3) -> Result<f64> {
        let rest = self.to_rest(part_id, world)?;
        Ok(self.part(part_id)?.shape.distance(&rest))
    }
}

/// Point cloud with ground-truth labels. `normals` is present for clouds
/// sampled from a synthetic object and absent for clouds read from disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledCloud {
    pub points: Vec<Vec3>,
    pub part_id: Vec<u32>,
    pub semantic: Vec<Semantic>,
    pub normals: Option<Vec<Vec3>>,
}

impl LabeledCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if self.part_id.len() != n
            || self.semantic.len() != n
            || self.normals.as_ref().is_some_and(|v| v.len() != n)
        {
            return Err(Error::Validation("cloud arrays have mismatched lengths".into()));
        }
        Ok(())
    }

    /// Keeps the points at `indices` in the given order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            part_id: indices.iter().map(|&i| self.part_id[i]).collect(),
            semantic: indices.iter().map(|&i| self.semantic[i]).collect(),
            normals: self.normals.as_ref().map(|n| indices.iter().map(|&i| n[i]).collect()),
        }
    }

    /// Indices of points belonging to `part_id`.
    pub fn part_indices(&self, part_id: u32) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.part_id[i] == part_id).collect()
    }

    /// Per-part centroid of the sampled points.
    pub fn part_centroids(&self) -> BTreeMap<u32, Vec3> {
        let mut acc: BTreeMap<u32, (Vec3, usize)> = BTreeMap::new();
        for (p, &id) in self.points.iter().zip(&self.part_id) {
            let e = acc.entry(id).or_insert((Vec3::zeros(), 0));
            e.0 += p;
            e.1 += 1;
        }
        acc.into_iter().map(|(id, (s, n))| (id, s / n as f64)).collect()
    }
}

/// Samples `n_points` uniformly by surface area over every box face of the
/// object in its current pose.
pub fn sample_cloud(obj: &ArticulatedObject, n_points: usize, rng_seed: u64) -> Result<LabeledCloud> {
    if n_points == 0 {
        return Err(Error::Validation("n_points must be at least 1".into()));
    }
    // (owner part id or 0, shape, axis, sign)
    let mut faces = Vec::new();
    let mut weights = Vec::new();
    let owners = std::iter::once((0u32, &obj.spec.static_shape))
        .chain(obj.spec.parts.iter().map(|p| (p.part_id, &p.shape)));
    for (owner, shape) in owners {
        for (area, axis, sign) in shape.faces() {
            faces.push((owner, *shape, axis, sign));
            weights.push(area);
        }
    }
    let picker = WeightedIndex::new(&weights)
        .map_err(|e| Error::Validation(format!("cannot sample faces: {e}")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut cloud = LabeledCloud {
        points: Vec::with_capacity(n_points),
        part_id: Vec::with_capacity(n_points),
        semantic: Vec::with_capacity(n_points),
        normals: Some(Vec::with_capacity(n_points)),
    };
    let normals = cloud.normals.as_mut().expect("just set");
    for _ in 0..n_points {
        let (owner, shape, axis, sign) = faces[picker.sample(&mut rng)];
        let (rest, rest_normal) = shape.sample_face(axis, sign, &mut rng);
        let (p, n, sem) = if owner == 0 {
            (rest, rest_normal, Semantic::Static)
        } else {
            let slot = obj.slot(owner)?;
            let part = &obj.spec.parts[slot];
            let p = part.joint.apply(&rest, obj.state[slot])?;
            let n = match part.joint.joint_type {
                JointType::Revolute => rodrigues(&part.joint.axis_dir, obj.state[slot]) * rest_normal,
                JointType::Prismatic => rest_normal,
            };
            (p, n, Semantic::of_joint(part.joint.joint_type))
        };
        cloud.points.push(p);
        cloud.part_id.push(owner);
        cloud.semantic.push(sem);
        normals.push(n);
    }
    Ok(cloud)
}

/// Keeps the points whose outward normal faces `viewpoint`; a cheap
/// stand-in for single-view occlusion. Returns the culled cloud and the
/// kept indices.
pub fn cull_to_viewpoint(cloud: &LabeledCloud, viewpoint: &Vec3) -> Result<(LabeledCloud, Vec<usize>)> {
    let normals = cloud
        .normals
        .as_ref()
        .ok_or_else(|| Error::Validation("viewpoint culling needs per-point normals".into()))?;
    let kept: Vec<usize> = (0..cloud.len())
        .filter(|&i| normals[i].dot(&(viewpoint - cloud.points[i])) > 0.0)
        .collect();
    Ok((cloud.subset(&kept), kept))
}

/// Per-point predictions (or ground truth) of the articulation fields.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PerPointFields {
    /// Probabilities of static, revolute and prismatic.
    pub class_probs: Vec<[f64; 3]>,
    /// Vector from the point to its part centroid.
    pub offset: Vec<Vec3>,
    /// Vector from the point to its closest point on the joint axis.
    pub projection: Vec<Vec3>,
    pub axis_dir: Vec<Vec3>,
}

impl PerPointFields {
    pub fn len(&self) -> usize {
        self.class_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_probs.is_empty()
    }

    /// Argmax class per point; ties resolve to the lower class index.
    pub fn predicted_class(&self, i: usize) -> Semantic {
        let probs = &self.class_probs[i];
        let mut best = 0;
        for k in 1..3 {
            if probs[k] > probs[best] {
                best = k;
            }
        }
        Semantic::from_index(best).expect("index < 3")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            class_probs: indices.iter().map(|&i| self.class_probs[i]).collect(),
            offset: indices.iter().map(|&i| self.offset[i]).collect(),
            projection: indices.iter().map(|&i| self.projection[i]).collect(),
            axis_dir: indices.iter().map(|&i| self.axis_dir[i]).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.class_probs.len();
        if self.offset.len() != n || self.projection.len() != n || self.axis_dir.len() != n {
            return Err(Error::Validation("field arrays have mismatched lengths".into()));
        }
        for (i, probs) in self.class_probs.iter().enumerate() {
            if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("class_probs row {i} is not a probability simplex")));
            }
        }
        for (i, d) in self.axis_dir.iter().enumerate() {
            if (d.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Validation(format!("axis_dir row {i} is not unit length")));
            }
        }
        Ok(())
    }
}

pub fn one_hot(class: Semantic) -> [f64; 3] {
    let mut p = [0.0; 3];
    p[class.index()] = 1.0;
    p
}

/// Exact per-point fields for a cloud sampled from `obj` in its current pose.
/// Offsets point to the centroid of the part's sampled points.
pub fn ground_truth_fields(cloud: &LabeledCloud, obj: &ArticulatedObject) -> Result<PerPointFields> {
    cloud.validate()?;
    let centroids = cloud.part_centroids();
    let n = cloud.len();
    let mut fields = PerPointFields {
        class_probs: Vec::with_capacity(n),
        offset: Vec::with_capacity(n),
        projection: Vec::with_capacity(n),
        axis_dir: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (p, id, sem) = (cloud.points[i], cloud.part_id[i], cloud.semantic[i]);
        if id == 0 {
            if sem != Semantic::Static {
                return Err(Error::Validation(format!("point {i}: static point labeled {sem:?}")));
            }
            fields.class_probs.push(one_hot(Semantic::Static));
            fields.offset.push(Vec3::zeros());
            fields.projection.push(Vec3::zeros());
            fields.axis_dir.push(STATIC_AXIS_SENTINEL);
            continue;
        }
        let joint = obj
            .part(id)
            .map_err(|_| Error::Validation(format!("point {i}: part {id} not in object")))?
            .joint;
        if sem != Semantic::of_joint(joint.joint_type) {
            return Err(Error::Validation(format!(
                "point {i}: semantic {sem:?} inconsistent with part {id} joint type"
            )));
        }
        let (_, v) = project_point_to_axis(&p, &joint)?;
        fields.class_probs.push(one_hot(sem));
        fields.offset.push(centroids[&id] - p);
        fields.projection.push(v);
        fields.axis_dir.push(joint.axis_dir);
    }
    Ok(fields)
}

/// Corruption applied to ground-truth fields to emulate network predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    pub class_flip_prob: f64,
    pub offset_sigma: f64,
    pub projection_sigma: f64,
    /// Radians.
    pub axis_dir_sigma: f64,
    pub dropout_frac: f64,
    pub rng_seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            class_flip_prob: 0.0,
            offset_sigma: 0.0,
            projection_sigma: 0.0,
            axis_dir_sigma: 0.0,
            dropout_frac: 0.0,
            rng_seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.class_flip_prob)
            && (0.0..1.0).contains(&self.dropout_frac)
            && [self.offset_sigma, self.projection_sigma, self.axis_dir_sigma]
                .iter()
                .all(|s| s.is_finite() && *s >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("noise model out of range: {self:?}")))
        }
    }
}

/// Corrupted fields together with the indices (into the input) of the
/// points that survived dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptedFields {
    pub fields: PerPointFields,
    pub kept: Vec<usize>,
}

pub fn corrupt_fields(fields: &PerPointFields, noise: &NoiseModel) -> Result<CorruptedFields> {
    noise.validate()?;
    fields.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let gauss = |sigma: f64| Normal::new(0.0, sigma).expect("sigma validated");
    let (offset_noise, projection_noise, angle_noise) = (
        gauss(noise.offset_sigma),
        gauss(noise.projection_sigma),
        gauss(noise.axis_dir_sigma),
    );

    let mut out = fields.clone();
    for i in 0..fields.len() {
        if noise.class_flip_prob > 0.0 && rng.random::<f64>() < noise.class_flip_prob {
            let current = fields.predicted_class(i).index();
            let other = (current + rng.random_range(1..3)) % 3;
            out.class_probs[i] = one_hot(Semantic::from_index(other).expect("index < 3"));
        }
        if noise.offset_sigma > 0.0 {
            out.offset[i] += Vec3::from_fn(|_, _| offset_noise.sample(&mut rng));
        }
        if noise.projection_sigma > 0.0 {
            out.projection[i] += Vec3::from_fn(|_, _| projection_noise.sample(&mut rng));
        }
        if noise.axis_dir_sigma > 0.0 {
            let d = fields.axis_dir[i];
            let (e1, e2) = perpendicular_basis(&d);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let tilt_axis = e1 * phi.cos() + e2 * phi.sin();
            let angle = angle_noise.sample(&mut rng).abs();
            out.axis_dir[i] = (rodrigues(&tilt_axis, angle) * d).normalize();
        }
    }

    let n = fields.len();
    let drop = (noise.dropout_frac * n as f64).round() as usize;
    let kept: Vec<usize> = if drop == 0 {
        (0..n).collect()
    } else {
        let mut removed = vec![false; n];
        for i in index::sample(&mut rng, n, drop) {
            removed[i] = true;
        }
        (0..n).filter(|&i| !removed[i]).collect()
    };
    if kept.len() != n {
        out = out.subset(&kept);
    }
    Ok(CorruptedFields { fields: out, kept })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{door_part, drawer_part, SceneRecipe};
    use crate::kinematics::{distance_to_line, foot_on_line};
    use std::f64::consts::FRAC_PI_2;

    fn cabinet() -> BoxShape {
        BoxShape::new(Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.25, 0.3, 0.4))
    }

    fn door_spec() -> ObjectSpec {
        ObjectSpec {
            static_shape: cabinet(),
            parts: vec![PartSpec {
                part_id: 1,
                joint: JointParams::revolute(Vec3::z(), Vec3::new(0.25, -0.3, 0.0)).unwrap(),
                shape: BoxShape::new(Vec3::new(0.26, 0.0, 0.4), Vec3::new(0.01, 0.3, 0.35)),
                state_range: [0.0, FRAC_PI_2],
            }],
            rng_seed: 7,
        }
    }

    #[test]
    fn build_single_door() {
        let obj = ArticulatedObject::build(door_spec()).unwrap();
        assert_eq!(obj.num_parts(), 1);
        assert_eq!(obj.parts()[0].joint.joint_type, JointType::Revolute);
        assert_eq!(obj.joint_state(1).unwrap(), 0.0);
    }

    #[test]
    fn build_rejects_duplicate_ids() {
        let mut spec = door_spec();
        let dup = spec.parts[0].clone();
        spec.parts.push(dup);
        assert!(matches!(ArticulatedObject::build(spec), Err(Error::Validation(_))));
    }

    #[test]
    fn build_door_and_drawer() {
        let recipe = SceneRecipe::default();
        let spec = ObjectSpec {
            static_shape: cabinet(),
            parts: vec![
                door_part(1, &cabinet(), (0.45, 0.75), crate::generator::Hinge::Left, &recipe),
                drawer_part(2, &cabinet(), (0.05, 0.35), &recipe),
            ],
            rng_seed: 0,
        };
        let obj = ArticulatedObject::build(spec).unwrap();
        assert_eq!(obj.num_parts(), 2);
        let cloud = sample_cloud(&obj, 2000, 1).unwrap();
        let kinds: HashSet<_> = cloud.semantic.iter().copied().collect();
        assert!(kinds.contains(&Semantic::Revolute) && kinds.contains(&Semantic::Prismatic));
    }

    #[test]
    fn joint_state_moves_only_part_points() {
        let mut obj = ArticulatedObject::build(door_spec()).unwrap();
        let before = sample_cloud(&obj, 500, 3).unwrap();
        obj.set_joint_state(1, 0.0).unwrap();
        assert_eq!(sample_cloud(&obj, 500, 3).unwrap(), before);

        obj.set_joint_state(1, 0.7).unwrap();
        let after = sample_cloud(&obj, 500, 3).unwrap();
        let joint = obj.part(1).unwrap().joint;
        for i in 0..before.len() {
            if before.part_id[i] == 0 {
                assert_eq!(before.points[i], after.points[i]);
            } else {
                let expect = crate::kinematics::rotate_about_axis(&before.points[i], &joint, 0.7).unwrap();
                assert!((expect - after.points[i]).norm() < 1e-12);
            }
        }
        assert!(matches!(obj.set_joint_state(1, 2.0), Err(Error::JointLimit { .. })));
        assert!(matches!(obj.set_joint_state(1, -0.1), Err(Error::JointLimit { .. })));
    }

    #[test]
    fn prismatic_state_is_rigid_translation() {
        let spec = ObjectSpec {
            static_shape: cabinet(),
            parts: vec![PartSpec {
                part_id: 4,
                joint: JointParams::prismatic(Vec3::x(), Vec3::new(0.1, 0.0, 0.2)).unwrap(),
                shape: BoxShape::new(Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.15, 0.25, 0.08)),
                state_range: [0.0, 0.3],
            }],
            rng_seed: 0,
        };
        let mut obj = ArticulatedObject::build(spec).unwrap();
        let before = sample_cloud(&obj, 400, 9).unwrap();
        obj.set_joint_state(4, 0.1).unwrap();
        let after = sample_cloud(&obj, 400, 9).unwrap();
        for i in 0..400 {
            let shift = if before.part_id[i] == 4 { Vec3::new(0.1, 0.0, 0.0) } else { Vec3::zeros() };
            assert!((after.points[i] - before.points[i] - shift).norm() < 1e-15);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let obj = ArticulatedObject::build(door_spec()).unwrap();
        assert_eq!(sample_cloud(&obj, 300, 11).unwrap(), sample_cloud(&obj, 300, 11).unwrap());
        assert_ne!(sample_cloud(&obj, 300, 11).unwrap(), sample_cloud(&obj, 300, 12).unwrap());
        assert!(sample_cloud(&obj, 0, 11).is_err());
    }

    #[test]
    fn equal_area_parts_split_binomially() {
        let tiny = BoxShape::new(Vec3::new(0.0, 0.0, -5.0), Vec3::new(1e-6, 1e-6, 1e-6));
        let part = |id: u32, x: f64| PartSpec {
            part_id: id,
            joint: JointParams::revolute(Vec3::z(), Vec3::new(x, 0.0, 0.0)).unwrap(),
            shape: BoxShape::new(Vec3::new(x, 0.2, 0.0), Vec3::new(0.1, 0.2, 0.3)),
            state_range: [0.0, 1.0],
        };
        let obj = ArticulatedObject::build(ObjectSpec {
            static_shape: tiny,
            parts: vec![part(1, 0.0), part(2, 2.0)],
            rng_seed: 0,
        })
        .unwrap();
        // binomial(1000, 1/2): sigma = sqrt(250)
        let bound = 3.0 * 250f64.sqrt();
        for seed in 0..20 {
            let cloud = sample_cloud(&obj, 1000, seed).unwrap();
            let ones = cloud.part_id.iter().filter(|&&id| id == 1).count() as f64;
            let twos = cloud.part_id.iter().filter(|&&id| id == 2).count() as f64;
            assert!((ones - 500.0).abs() <= bound, "seed {seed}: {ones}");
            assert!((twos - 500.0).abs() <= bound, "seed {seed}: {twos}");
        }
    }

    #[test]
    fn ground_truth_examples() {
        // door point (1,1,2) with a z hinge through the origin
        let spec = ObjectSpec {
            static_shape: cabinet(),
            parts: vec![PartSpec {
                part_id: 1,
                joint: JointParams::revolute(Vec3::z(), Vec3::zeros()).unwrap(),
                shape: BoxShape::new(Vec3::new(1.0, 1.0, 2.0), Vec3::new(0.1, 0.1, 0.1)),
                state_range: [0.0, 1.0],
            }],
            rng_seed: 0,
        };
        let obj = ArticulatedObject::build(spec).unwrap();
        let cloud = LabeledCloud {
            points: vec![Vec3::new(1.0, 1.0, 2.0), Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 2.0, 3.0)],
            part_id: vec![1, 1, 1],
            semantic: vec![Semantic::Revolute; 3],
            normals: None,
        };
        let f = ground_truth_fields(&cloud, &obj).unwrap();
        assert!((f.projection[0] - Vec3::new(-1.0, -1.0, 0.0)).norm() < 1e-15);
        assert_eq!(f.projection[1], Vec3::zeros());
        // centroid of the three points is (1,1,2): the first point sits on it
        assert!(f.offset[0].norm() < 1e-15);
        assert_eq!(f.axis_dir[0], Vec3::z());
        assert_eq!(f.class_probs[0], [0.0, 1.0, 0.0]);

        let bad = LabeledCloud { part_id: vec![1, 1, 9], ..cloud.clone() };
        assert!(matches!(ground_truth_fields(&bad, &obj), Err(Error::Validation(_))));
        let bad = LabeledCloud { semantic: vec![Semantic::Prismatic; 3], ..cloud };
        assert!(matches!(ground_truth_fields(&bad, &obj), Err(Error::Validation(_))));
    }

    #[test]
    fn ground_truth_geometry_holds_at_every_state() {
        let mut obj = ArticulatedObject::build(SceneRecipe::default().object_spec(5, 3)).unwrap();
        let ids: Vec<u32> = obj.parts().iter().map(|p| p.part_id).collect();
        for step in 0..4 {
            for &id in &ids {
                let [lo, hi] = obj.part(id).unwrap().state_range;
                obj.set_joint_state(id, lo + (hi - lo) * step as f64 / 3.0).unwrap();
            }
            let cloud = sample_cloud(&obj, 1500, step).unwrap();
            let f = ground_truth_fields(&cloud, &obj).unwrap();
            let centroids = cloud.part_centroids();
            for i in 0..cloud.len() {
                let id = cloud.part_id[i];
                if id == 0 {
                    assert_eq!(f.axis_dir[i], STATIC_AXIS_SENTINEL);
                    continue;
                }
                let j = obj.part(id).unwrap().joint;
                let p = cloud.points[i];
                assert!(distance_to_line(&(p + f.projection[i]), &j.origin, &j.axis_dir) < 1e-9);
                assert!(f.projection[i].dot(&j.axis_dir).abs() < 1e-9);
                assert!((p + f.offset[i] - centroids[&id]).norm() < 1e-9);
                assert!((foot_on_line(&p, &j.origin, &j.axis_dir) - (p + f.projection[i])).norm() < 1e-9);
            }
        }
    }

    fn noisy_scene_fields() -> PerPointFields {
        let obj = ArticulatedObject::build(SceneRecipe::default().object_spec(2, 2)).unwrap();
        let cloud = sample_cloud(&obj, 2000, 4).unwrap();
        ground_truth_fields(&cloud, &obj).unwrap()
    }

    #[test]
    fn zero_noise_is_identity() {
        let f = noisy_scene_fields();
        let out = corrupt_fields(&f, &NoiseModel::default()).unwrap();
        assert_eq!(out.fields, f);
        assert_eq!(out.kept, (0..f.len()).collect::<Vec<_>>());
    }

    #[test]
    fn dropout_count_is_exact() {
        let f = noisy_scene_fields().subset(&(0..1000).collect::<Vec<_>>());
        let noise = NoiseModel { dropout_frac: 0.5, rng_seed: 3, ..Default::default() };
        let out = corrupt_fields(&f, &noise).unwrap();
        assert_eq!(out.fields.len(), 500);
        assert_eq!(out.kept.len(), 500);
        assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(out.fields.offset[7], f.offset[out.kept[7]]);
    }

    #[test]
    fn axis_noise_matches_half_normal_mean() {
        let sigma = 0.05;
        let dirs: Vec<Vec3> = (0..2000)
            .map(|i| Vec3::new((i as f64).sin(), (i as f64 * 0.3).cos(), 0.5).normalize())
            .collect();
        let f = PerPointFields {
            class_probs: vec![one_hot(Semantic::Revolute); 2000],
            offset: vec![Vec3::zeros(); 2000],
            projection: vec![Vec3::zeros(); 2000],
            axis_dir: dirs.clone(),
        };
        let noise = NoiseModel { axis_dir_sigma: sigma, rng_seed: 17, ..Default::default() };
        let out = corrupt_fields(&f, &noise).unwrap();
        let mean: f64 = out
            .fields
            .axis_dir
            .iter()
            .zip(&dirs)
            .map(|(a, b)| a.cross(b).norm().atan2(a.dot(b)))
            .sum::<f64>()
            / 2000.0;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - expected).abs() / expected < 0.15, "{mean} vs {expected}");
        assert!(out.fields.axis_dir.iter().all(|d| (d.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn corruption_is_reproducible_and_flips_to_other_classes() {
        let f = noisy_scene_fields();
        let noise = NoiseModel {
            class_flip_prob: 0.3,
            offset_sigma: 0.01,
            projection_sigma: 0.02,
            axis_dir_sigma: 0.1,
            dropout_frac: 0.1,
            rng_seed: 99,
        };
        let a = corrupt_fields(&f, &noise).unwrap();
        let b = corrupt_fields(&f, &noise).unwrap();
        assert_eq!(a, b);
        let mut flips = 0;
        for (k, &i) in a.kept.iter().enumerate() {
            if a.fields.class_probs[k] != f.class_probs[i] {
                flips += 1;
                assert_ne!(a.fields.predicted_class(k), f.predicted_class(i));
            }
        }
        let rate = flips as f64 / a.kept.len() as f64;
        assert!((rate - 0.3).abs() < 0.05, "{rate}");
        assert!(corrupt_fields(&f, &NoiseModel { dropout_frac: 1.0, ..noise }).is_err());
    }

    #[test]
    fn viewpoint_culling_keeps_front_faces() {
        let obj = ArticulatedObject::build(door_spec()).unwrap();
        let cloud = sample_cloud(&obj, 1000, 2).unwrap();
        let view = Vec3::new(5.0, 0.0, 0.4);
        let (culled, kept) = cull_to_viewpoint(&cloud, &view).unwrap();
        assert!(!culled.is_empty() && culled.len() < cloud.len());
        for (k, &i) in kept.iter().enumerate() {
            assert_eq!(culled.points[k], cloud.points[i]);
            let n = cloud.normals.as_ref().unwrap()[i];
            assert!(n.dot(&(view - cloud.points[i])) > 0.0);
        }
        let bare = LabeledCloud { normals: None, ..cloud };
        assert!(cull_to_viewpoint(&bare, &view).is_err());
    }
}
