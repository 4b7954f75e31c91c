//! Evaluable forms of the per-point training objective: focal segmentation
//! loss, the offset/projection vector loss and the axis direction loss.
//! No gradients; these are scores for predicted fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::Vec3;
use crate::scene::{PerPointFields, Semantic};

pub const DEFAULT_GAMMA: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 1.0;

/// Below this norm a vector has no direction and the cosine term is 0.
const ZERO_NORM: f64 = 1e-12;
const MIN_PROB: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub seg: f64,
    pub offset: f64,
    pub projection: f64,
    pub direction: f64,
    pub total: f64,
}

fn check_simplex(probs: &[f64; 3]) -> Result<()> {
    if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
        return Err(Error::Validation(format!("{probs:?} is not a probability simplex")));
    }
    Ok(())
}

/// `−α (1 − p_t)^γ log p_t`, with `p_t` clamped at 1e-12 inside the log.
pub fn focal_loss(class_probs: &[f64; 3], true_class: Semantic, gamma: f64, alpha: f64) -> Result<f64> {
    check_simplex(class_probs)?;
    if !(gamma >= 0.0) || !(alpha > 0.0) {
        return Err(Error::Validation(format!("focal loss needs gamma >= 0 and alpha > 0, got {gamma}, {alpha}")));
    }
    let p_t = class_probs[true_class.index()];
    Ok(-alpha * (1.0 - p_t).powf(gamma) * p_t.max(MIN_PROB).ln())
}

/// Distance between `pred` and `gt` minus the cosine of the angle between them.
/// Attains its minimum −1 at `pred = gt` for nonzero `gt`.
pub fn vector_loss(pred: &Vec3, gt: &Vec3) -> f64 {
    let distance = (pred - gt).norm();
    let (np, ng) = (pred.norm(), gt.norm());
    let cosine = if np < ZERO_NORM || ng < ZERO_NORM { 0.0 } else { gt.dot(pred) / (ng * np) };
    distance - cosine
}

/// `1 − pred·gt` for unit directions; 0 when equal, 2 when opposite.
pub fn direction_loss(pred_dir: &Vec3, gt_dir: &Vec3) -> Result<f64> {
    for d in [pred_dir, gt_dir] {
        if (d.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("direction {:?} is not unit length", d.as_slice())));
        }
    }
    Ok(1.0 - pred_dir.dot(gt_dir))
}

/// Mean over all points of the four per-point terms. Points whose ground-truth
/// class is static contribute only the segmentation term.
pub fn total_loss(pred: &PerPointFields, gt: &PerPointFields, gamma: f64, alpha: f64) -> Result<LossBreakdown> {
    let n = gt.len();
    if pred.len() != n {
        return Err(Error::Validation(format!("field length mismatch: {} predicted vs {n} ground truth", pred.len())));
    }
    pred.validate()?;
    gt.validate()?;
    if n == 0 {
        return Ok(LossBreakdown::default());
    }
    let mut sum = LossBreakdown::default();
    for i in 0..n {
        let class = gt.predicted_class(i);
        sum.seg += focal_loss(&pred.class_probs[i], class, gamma, alpha)?;
        if class.is_movable() {
            sum.offset += vector_loss(&pred.offset[i], &gt.offset[i]);
            sum.projection += vector_loss(&pred.projection[i], &gt.projection[i]);
            sum.direction += direction_loss(&pred.axis_dir[i], &gt.axis_dir[i])?;
        }
    }
    let n = n as f64;
    let (seg, offset, projection, direction) = (sum.seg / n, sum.offset / n, sum.projection / n, sum.direction / n);
    Ok(LossBreakdown { seg, offset, projection, direction, total: seg + offset + projection + direction })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::SceneRecipe;
    use crate::scene::{corrupt_fields, ground_truth_fields, one_hot, sample_cloud, NoiseModel};
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn focal_values() {
        let perfect = focal_loss(&[0.0, 1.0, 0.0], Semantic::Revolute, 2.0, 1.0).unwrap();
        assert_eq!(perfect, 0.0);
        let half = [0.5, 0.25, 0.25];
        assert!((focal_loss(&half, Semantic::Static, 0.0, 1.0).unwrap() - LN_2).abs() < 1e-12);
        assert!((focal_loss(&half, Semantic::Static, 2.0, 1.0).unwrap() - 0.25 * LN_2).abs() < 1e-12);
        // clamped log keeps p_t = 0 finite
        assert!(focal_loss(&[1.0, 0.0, 0.0], Semantic::Prismatic, 2.0, 1.0).unwrap().is_finite());
    }

    #[test]
    fn focal_rejects_bad_input() {
        assert!(focal_loss(&[0.5, 0.5, 0.5], Semantic::Static, 2.0, 1.0).is_err());
        assert!(focal_loss(&[-0.1, 0.6, 0.5], Semantic::Static, 2.0, 1.0).is_err());
        assert!(focal_loss(&[1.0, 0.0, 0.0], Semantic::Static, -1.0, 1.0).is_err());
        assert!(focal_loss(&[1.0, 0.0, 0.0], Semantic::Static, 2.0, 0.0).is_err());
    }

    #[test]
    fn vector_loss_values() {
        let x = Vec3::x();
        assert_eq!(vector_loss(&x, &x), -1.0);
        assert!((vector_loss(&Vec3::y(), &x) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(vector_loss(&Vec3::new(2.0, 0.0, 0.0), &x), 0.0);
        // zero vectors drop the cosine term
        assert_eq!(vector_loss(&Vec3::zeros(), &x), 1.0);
        assert_eq!(vector_loss(&Vec3::zeros(), &Vec3::zeros()), 0.0);
    }

    #[test]
    fn direction_loss_values() {
        let u = Vec3::new(1.0, 2.0, 2.0) / 3.0;
        assert_eq!(direction_loss(&u, &u).unwrap(), 0.0);
        let perp = Vec3::new(2.0, -1.0, 0.0).normalize();
        assert!((direction_loss(&perp, &u).unwrap() - 1.0).abs() < 1e-15);
        assert!((direction_loss(&-u, &u).unwrap() - 2.0).abs() < 1e-15);
        assert!(direction_loss(&(u * 2.0), &u).is_err());
    }

    fn movable_points(n: usize) -> PerPointFields {
        PerPointFields {
            class_probs: vec![one_hot(Semantic::Revolute); n],
            offset: (0..n).map(|i| Vec3::new(0.1 + i as f64 * 0.01, -0.05, 0.02)).collect(),
            projection: (0..n).map(|i| Vec3::new(-0.3, 0.01 * i as f64, 0.0)).collect(),
            axis_dir: vec![Vec3::z(); n],
        }
    }

    #[test]
    fn total_loss_at_truth() {
        let gt = movable_points(10);
        let b = total_loss(&gt, &gt, DEFAULT_GAMMA, DEFAULT_ALPHA).unwrap();
        assert_eq!(b.seg, 0.0);
        assert_eq!(b.direction, 0.0);
        assert!((b.offset + 1.0).abs() < 1e-12);
        assert!((b.projection + 1.0).abs() < 1e-12);
        assert!((b.total + 2.0).abs() < 1e-12);
    }

    #[test]
    fn total_loss_masks_static_points() {
        let gt = PerPointFields {
            class_probs: vec![one_hot(Semantic::Static)],
            offset: vec![Vec3::zeros()],
            projection: vec![Vec3::zeros()],
            axis_dir: vec![Vec3::z()],
        };
        let pred = PerPointFields {
            class_probs: vec![[0.7, 0.2, 0.1]],
            offset: vec![Vec3::new(1.0, 2.0, 3.0)],
            projection: vec![Vec3::new(-1.0, 0.0, 0.0)],
            axis_dir: vec![Vec3::x()],
        };
        let b = total_loss(&pred, &gt, DEFAULT_GAMMA, DEFAULT_ALPHA).unwrap();
        assert_eq!((b.offset, b.projection, b.direction), (0.0, 0.0, 0.0));
        assert!(b.seg > 0.0);
        assert!(total_loss(&pred, &movable_points(2), 2.0, 1.0).is_err());
    }

    fn scene_fields(seed: u64) -> PerPointFields {
        let obj = SceneRecipe::default().random_object(seed, 2).unwrap();
        let cloud = sample_cloud(&obj, 600, seed).unwrap();
        ground_truth_fields(&cloud, &obj).unwrap()
    }

    #[test]
    fn total_loss_is_invariant_to_duplication_and_order() {
        let gt = scene_fields(1);
        let noise = NoiseModel {
            class_flip_prob: 0.1,
            offset_sigma: 0.02,
            projection_sigma: 0.02,
            axis_dir_sigma: 0.1,
            dropout_frac: 0.0,
            rng_seed: 5,
        };
        let pred = corrupt_fields(&gt, &noise).unwrap().fields;
        let base = total_loss(&pred, &gt, 2.0, 1.0).unwrap();

        let doubled: Vec<usize> = (0..gt.len()).chain(0..gt.len()).collect();
        let d = total_loss(&pred.subset(&doubled), &gt.subset(&doubled), 2.0, 1.0).unwrap();
        let reversed: Vec<usize> = (0..gt.len()).rev().collect();
        let r = total_loss(&pred.subset(&reversed), &gt.subset(&reversed), 2.0, 1.0).unwrap();
        for other in [d, r] {
            assert!((other.seg - base.seg).abs() < 1e-12);
            assert!((other.offset - base.offset).abs() < 1e-12);
            assert!((other.projection - base.projection).abs() < 1e-12);
            assert!((other.direction - base.direction).abs() < 1e-12);
            assert!((other.total - base.total).abs() < 1e-12);
        }
    }

    #[test]
    fn expected_loss_grows_with_noise() {
        let gt = scene_fields(2);
        let sigmas = [0.0, 0.01, 0.03, 0.1];
        let means: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                (0..20)
                    .map(|seed| {
                        let noise = NoiseModel {
                            class_flip_prob: s,
                            offset_sigma: s,
                            projection_sigma: s,
                            axis_dir_sigma: s,
                            dropout_frac: 0.0,
                            rng_seed: seed,
                        };
                        let pred = corrupt_fields(&gt, &noise).unwrap().fields;
                        total_loss(&pred, &gt, 2.0, 1.0).unwrap().total
                    })
                    .sum::<f64>()
                    / 20.0
            })
            .collect();
        assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn vector_loss_bounded_below(x in vec3(), gt in vec3().prop_filter("nonzero", |g| g.norm() > 1e-3)) {
            let at_truth = vector_loss(&gt, &gt);
            prop_assert!((at_truth + 1.0).abs() < 1e-12);
            prop_assert!(vector_loss(&x, &gt) >= -1.0 - 1e-12);
            if (x - gt).norm() > 1e-9 {
                prop_assert!(vector_loss(&x, &gt) > -1.0);
            }
            // local check: small moves away from gt increase the loss
            for axis in 0..3 {
                for s in [-1e-4, 1e-4] {
                    let mut y = gt;
                    y[axis] += s;
                    prop_assert!(vector_loss(&y, &gt) > at_truth);
                }
            }
        }

        #[test]
        fn focal_monotone_in_pt(a in 0.0..1.0f64, b in 0.0..1.0f64, gamma in 0.0..5.0f64, alpha in 0.1..3.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let probs = |p: f64| [1.0 - p, p, 0.0];
            let l_lo = focal_loss(&probs(lo), Semantic::Revolute, gamma, alpha).unwrap();
            let l_hi = focal_loss(&probs(hi), Semantic::Revolute, gamma, alpha).unwrap();
            prop_assert!(l_hi <= l_lo + 1e-12);
        }
    }
}
