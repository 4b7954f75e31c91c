//! Seeded fixtures shared by the benchmarks.

use articukit_core::generator::SceneRecipe;
use articukit_core::kinematics::rodrigues;
use articukit_core::refine::PlanTemplate;
use articukit_core::scene::{ground_truth_fields, sample_cloud};
use articukit_core::{JointParams, PerPointFields, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform `[0, 1)` cost matrix.
pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.random::<f64>()).collect()).collect()
}

/// `n` points in `k` well separated Gaussian-ish blobs in 3D.
pub fn blobs(n: usize, k: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let c = (i % k) as f64;
            [c + 0.05 * rng.random::<f64>(), 0.05 * rng.random::<f64>(), 0.05 * rng.random::<f64>()]
        })
        .collect()
}

/// Points and oracle fields of the first movable part of a seeded scene.
pub fn part_with_fields(n_points: usize, seed: u64) -> (Vec<Vec3>, PerPointFields) {
    let obj = SceneRecipe::default().random_object(seed, 1).expect("scene");
    let cloud = sample_cloud(&obj, n_points, seed).expect("cloud");
    let fields = ground_truth_fields(&cloud, &obj).expect("fields");
    let members = cloud.part_indices(obj.parts()[0].part_id);
    let pts = members.iter().map(|&i| cloud.points[i]).collect();
    (pts, fields.subset(&members))
}

/// A door about `z`, one executed segment of `h` waypoints out of a plan of
/// `l`, and a start estimate tilted by `tilt_deg` and shifted by `shift`.
pub struct RefineFixture {
    pub truth: JointParams,
    pub psi0: JointParams,
    pub actual: Vec<Vec3>,
    pub template: PlanTemplate,
}

pub fn refine_fixture(l: usize, h: usize, tilt_deg: f64, shift: f64) -> RefineFixture {
    let truth = JointParams::revolute(Vec3::z(), Vec3::new(0.0, 0.0, 0.0)).expect("joint");
    let axis = rodrigues(&Vec3::x(), tilt_deg.to_radians()) * Vec3::z();
    let psi0 = JointParams::revolute(axis, Vec3::new(shift, 0.0, 0.0)).expect("joint");
    let grasp = Vec3::new(0.5, 0.0, 0.1);
    let displacements: Vec<f64> = (1..=l).map(|i| std::f64::consts::FRAC_PI_2 * i as f64 / l as f64).collect();
    let actual = displacements[..h].iter().map(|&d| truth.apply(&grasp, d).expect("motion")).collect();
    RefineFixture { truth, psi0, actual, template: PlanTemplate { grasp_point: grasp, current: 0.0, displacements } }
}
