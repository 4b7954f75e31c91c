//! Instance segmentation of movable parts: DBSCAN over points shifted by
//! their predicted offset and projection vectors, gated by predicted class,
//! plus the point-set IoU matching used for average precision.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Vec3;
use crate::scene::{PerPointFields, Semantic};

/// Cluster label for noise and unclustered points.
pub const NOISE: i32 = -1;

pub const DEFAULT_EPS: f64 = 0.05;
pub const DEFAULT_MIN_PTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// `p + ô` only.
    OffsetOnly,
    /// `p + v̂` only.
    ProjectionOnly,
    /// `(p + ô, p + v̂)` as one 6-dimensional feature.
    #[default]
    Concat,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub eps: f64,
    pub min_pts: usize,
    pub feature_mode: FeatureMode,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self { eps: DEFAULT_EPS, min_pts: DEFAULT_MIN_PTS, feature_mode: FeatureMode::Concat }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) || self.min_pts == 0 {
            return Err(Error::Validation(format!(
                "cluster params need eps > 0 and min_pts >= 1, got eps={} min_pts={}",
                self.eps, self.min_pts
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PartSegmentation {
    pub cluster_id: Vec<i32>,
    pub semantic: Vec<Semantic>,
}

impl PartSegmentation {
    pub fn num_clusters(&self) -> usize {
        self.cluster_id.iter().filter(|&&c| c >= 0).map(|&c| c as usize + 1).max().unwrap_or(0)
    }

    /// Member indices of each cluster, indexed by cluster id.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &c) in self.cluster_id.iter().enumerate() {
            if c >= 0 {
                out[c as usize].push(i);
            }
        }
        out
    }
}

/// Uniform grid over (up to) the first three feature coordinates; cells have
/// side `eps`, so every eps-neighbor lies in one of the 3^k adjacent cells.
struct Grid<'a, F> {
    features: &'a [F],
    eps: f64,
    eps_sq: f64,
    dims: usize,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a, F: AsRef<[f64]>> Grid<'a, F> {
    fn new(features: &'a [F], eps: f64) -> Self {
        let dims = features.first().map_or(0, |f| f.as_ref().len().min(3));
        let mut grid = Self { features, eps, eps_sq: eps * eps, dims, cells: HashMap::new() };
        for (i, f) in features.iter().enumerate() {
            let key = grid.key(f.as_ref());
            grid.cells.entry(key).or_default().push(i);
        }
        grid
    }

    fn key(&self, f: &[f64]) -> [i64; 3] {
        let mut k = [0i64; 3];
        for d in 0..self.dims {
            k[d] = (f[d] / self.eps).floor() as i64;
        }
        k
    }

    fn within(&self, i: usize, j: usize) -> bool {
        let (a, b) = (self.features[i].as_ref(), self.features[j].as_ref());
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        d <= self.eps_sq
    }

    fn for_each_neighbor(&self, i: usize, mut visit: impl FnMut(usize)) {
        let center = self.key(self.features[i].as_ref());
        let span = |d: usize| if d < self.dims { -1..=1 } else { 0..=0 };
        for dx in span(0) {
            for dy in span(1) {
                for dz in span(2) {
                    let key = [center[0] + dx, center[1] + dy, center[2] + dz];
                    if let Some(bucket) = self.cells.get(&key) {
                        for &j in bucket {
                            if self.within(i, j) {
                                visit(j);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Density-based clustering with a closed eps-ball. A point is core when its
/// neighborhood (itself included) holds at least `min_pts` points. Clusters
/// are numbered in ascending-index scan order; a border point belongs to the
/// first cluster that reaches it. Noise is labeled [`NOISE`].
pub fn dbscan<F: AsRef<[f64]>>(features: &[F], eps: f64, min_pts: usize) -> Result<Vec<i32>> {
    ClusterParams { eps, min_pts, feature_mode: FeatureMode::Concat }.validate()?;
    let n = features.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let dim = features[0].as_ref().len();
    if features.iter().any(|f| f.as_ref().len() != dim || f.as_ref().iter().any(|x| !x.is_finite())) {
        return Err(Error::Validation("features must share one dimension and be finite".into()));
    }

    let grid = Grid::new(features, eps);
    let core: Vec<bool> = (0..n)
        .map(|i| {
            let mut count = 0;
            grid.for_each_neighbor(i, |_| count += 1);
            count >= min_pts
        })
        .collect();

    const UNASSIGNED: i32 = i32::MIN;
    let mut labels = vec![UNASSIGNED; n];
    let mut next = 0;
    let mut queue = Vec::new();
    for seed in 0..n {
        if labels[seed] != UNASSIGNED || !core[seed] {
            continue;
        }
        labels[seed] = next;
        queue.push(seed);
        while let Some(j) = queue.pop() {
            grid.for_each_neighbor(j, |k| {
                if labels[k] == UNASSIGNED {
                    labels[k] = next;
                    if core[k] {
                        queue.push(k);
                    }
                }
            });
        }
        next += 1;
    }
    for l in &mut labels {
        if *l == UNASSIGNED {
            *l = NOISE;
        }
    }
    Ok(labels)
}

/// Clustering feature of one point under `mode`.
pub fn shifted_feature(p: &Vec3, offset: &Vec3, projection: &Vec3, mode: FeatureMode) -> Vec<f64> {
    let a = p + offset;
    let b = p + projection;
    match mode {
        FeatureMode::OffsetOnly => a.as_slice().to_vec(),
        FeatureMode::ProjectionOnly => b.as_slice().to_vec(),
        FeatureMode::Concat => vec![a.x, a.y, a.z, b.x, b.y, b.z],
    }
}

/// Groups movable points into part instances. Points predicted static are
/// left as [`NOISE`]; revolute and prismatic points are clustered separately.
/// Clusters smaller than `min_pts` are dissolved into noise. Final ids are
/// ordered by descending size, ties by smallest member index.
pub fn segment_parts(points: &[Vec3], fields: &PerPointFields, params: &ClusterParams) -> Result<PartSegmentation> {
    params.validate()?;
    fields.validate()?;
    if points.len() != fields.len() {
        return Err(Error::Validation(format!(
            "{} points but {} field rows",
            points.len(),
            fields.len()
        )));
    }
    let semantic: Vec<Semantic> = (0..points.len()).map(|i| fields.predicted_class(i)).collect();

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for class in [Semantic::Revolute, Semantic::Prismatic] {
        let idx: Vec<usize> = (0..points.len()).filter(|&i| semantic[i] == class).collect();
        if idx.is_empty() {
            continue;
        }
        let feats: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| shifted_feature(&points[i], &fields.offset[i], &fields.projection[i], params.feature_mode))
            .collect();
        let labels = dbscan(&feats, params.eps, params.min_pts)?;
        let mut groups: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
        for (k, &l) in labels.iter().enumerate() {
            if l != NOISE {
                groups.entry(l).or_default().push(idx[k]);
            }
        }
        clusters.extend(groups.into_values().filter(|g| g.len() >= params.min_pts));
    }
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut cluster_id = vec![NOISE; points.len()];
    for (id, members) in clusters.iter().enumerate() {
        for &i in members {
            cluster_id[i] = id as i32;
        }
    }
    Ok(PartSegmentation { cluster_id, semantic })
}

/// One predicted cluster paired with one ground-truth part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartMatch {
    pub cluster: i32,
    pub part_id: u32,
    pub iou: f64,
}

/// Greedy one-to-one matching of predicted clusters to ground-truth movable
/// parts (`part_id` ≠ 0) by descending point-set IoU. Pairs with zero
/// overlap are never matched.
pub fn match_parts(cluster_id: &[i32], gt_part_id: &[u32]) -> Result<Vec<PartMatch>> {
    if cluster_id.len() != gt_part_id.len() {
        return Err(Error::Validation(format!(
            "segmentation has {} points, ground truth {}",
            cluster_id.len(),
            gt_part_id.len()
        )));
    }
    let mut pred_size: BTreeMap<i32, usize> = BTreeMap::new();
    let mut gt_size: BTreeMap<u32, usize> = BTreeMap::new();
    let mut overlap: BTreeMap<(i32, u32), usize> = BTreeMap::new();
    for (&c, &g) in cluster_id.iter().zip(gt_part_id) {
        if c >= 0 {
            *pred_size.entry(c).or_default() += 1;
        }
        if g != 0 {
            *gt_size.entry(g).or_default() += 1;
        }
        if c >= 0 && g != 0 {
            *overlap.entry((c, g)).or_default() += 1;
        }
    }
    let mut pairs: Vec<PartMatch> = overlap
        .iter()
        .map(|(&(cluster, part_id), &inter)| {
            let union = pred_size[&cluster] + gt_size[&part_id] - inter;
            PartMatch { cluster, part_id, iou: inter as f64 / union as f64 }
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.iou
            .total_cmp(&a.iou)
            .then(a.cluster.cmp(&b.cluster))
            .then(a.part_id.cmp(&b.part_id))
    });
    let mut used_pred = Vec::new();
    let mut used_gt = Vec::new();
    let mut out = Vec::new();
    for m in pairs {
        if used_pred.contains(&m.cluster) || used_gt.contains(&m.part_id) {
            continue;
        }
        used_pred.push(m.cluster);
        used_gt.push(m.part_id);
        out.push(m);
    }
    Ok(out)
}

/// Per-scene average-precision surrogate: true positives divided by
/// (predicted clusters + ground-truth parts left without a true positive).
/// Equals 1 exactly when the partition is perfect at `iou_threshold`.
pub fn segmentation_ap(cluster_id: &[i32], gt_part_id: &[u32], iou_threshold: f64) -> Result<f64> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::Validation(format!("iou_threshold must be in (0, 1], got {iou_threshold}")));
    }
    let matches = match_parts(cluster_id, gt_part_id)?;
    let n_pred = cluster_id.iter().filter(|&&c| c >= 0).collect::<std::collections::BTreeSet<_>>().len();
    let n_gt = gt_part_id.iter().filter(|&&g| g != 0).collect::<std::collections::BTreeSet<_>>().len();
    let tp = matches.iter().filter(|m| m.iou >= iou_threshold).count();
    let denom = n_pred + (n_gt - tp);
    Ok(if denom == 0 { 1.0 } else { tp as f64 / denom as f64 })
}
