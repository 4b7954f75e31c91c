//! Random cabinet-like objects: a static body whose front face is split
//! into horizontal rows, each holding one door, flap or drawer.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointParams, Vec3};
use crate::scene::{ArticulatedObject, BoxShape, ObjectSpec, PartSpec};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hinge {
    Left,
    Right,
    /// Horizontal hinge along the bottom edge (a drop-down flap).
    Bottom,
}

/// Geometry knobs for generated objects. All lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneRecipe {
    pub body_half_x: [f64; 2],
    pub body_half_y: [f64; 2],
    pub body_half_z: [f64; 2],
    pub door_thickness: f64,
    pub side_margin: f64,
    pub row_gap: f64,
    pub door_max_angle: f64,
    pub flap_max_angle: f64,
    /// Drawer travel as a fraction of its depth.
    pub drawer_travel: f64,
    /// Probabilities of door, flap and drawer for each row.
    pub kind_weights: [f64; 3],
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            body_half_x: [0.2, 0.3],
            body_half_y: [0.25, 0.4],
            body_half_z: [0.3, 0.5],
            door_thickness: 0.02,
            side_margin: 0.01,
            row_gap: 0.02,
            door_max_angle: 2.0 * PI / 3.0,
            flap_max_angle: FRAC_PI_2,
            drawer_travel: 0.7,
            kind_weights: [0.4, 0.15, 0.45],
        }
    }
}

impl SceneRecipe {
    /// A random object with `n_parts` movable parts, one per row.
    pub fn object_spec(&self, seed: u64, n_parts: usize) -> ObjectSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pick = |r: [f64; 2]| rng.random_range(r[0]..=r[1]);
        let half = Vec3::new(pick(self.body_half_x), pick(self.body_half_y), pick(self.body_half_z));
        let body = BoxShape::new(Vec3::new(0.0, 0.0, half.z), half);

        let n = n_parts.max(1);
        let height = 2.0 * half.z;
        let total: f64 = self.kind_weights.iter().sum();
        let parts = (0..n)
            .map(|row| {
                let z_lo = height * row as f64 / n as f64 + self.row_gap;
                let z_hi = height * (row + 1) as f64 / n as f64 - self.row_gap;
                let id = row as u32 + 1;
                let draw = rng.random_range(0.0..total);
                if draw < self.kind_weights[0] {
                    let hinge = if rng.random_bool(0.5) { Hinge::Left } else { Hinge::Right };
                    door_part(id, &body, (z_lo, z_hi), hinge, self)
                } else if draw < self.kind_weights[0] + self.kind_weights[1] {
                    door_part(id, &body, (z_lo, z_hi), Hinge::Bottom, self)
                } else {
                    drawer_part(id, &body, (z_lo, z_hi), self)
                }
            })
            .collect();
        ObjectSpec { static_shape: body, parts, rng_seed: seed }
    }

    /// Builds the object for `seed` and moves each joint to a uniformly random
    /// state within its limits.
    pub fn random_object(&self, seed: u64, n_parts: usize) -> Result<ArticulatedObject> {
        let mut obj = ArticulatedObject::build(self.object_spec(seed, n_parts))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5747_e000_0001);
        let ranges: Vec<(u32, [f64; 2])> = obj.parts().iter().map(|p| (p.part_id, p.state_range)).collect();
        for (id, [lo, hi]) in ranges {
            obj.set_joint_state(id, rng.random_range(lo..=hi))?;
        }
        Ok(obj)
    }
}

/// A door in the z-row `row` of the front face (+x side) of `body`, opening outward.
pub fn door_part(part_id: u32, body: &BoxShape, row: (f64, f64), hinge: Hinge, recipe: &SceneRecipe) -> PartSpec {
    let front = body.center.x + body.half_extents.x;
    let t = recipe.door_thickness;
    let half_w = body.half_extents.y - recipe.side_margin;
    let (z_lo, z_hi) = row;
    let zc = 0.5 * (z_lo + z_hi);
    let shape = BoxShape::new(
        Vec3::new(front + 0.5 * t, body.center.y, zc),
        Vec3::new(0.5 * t, half_w, 0.5 * (z_hi - z_lo)),
    );
    let (axis, origin, max_angle) = match hinge {
        Hinge::Left => (-Vec3::z(), Vec3::new(front, body.center.y - half_w, zc), recipe.door_max_angle),
        Hinge::Right => (Vec3::z(), Vec3::new(front, body.center.y + half_w, zc), recipe.door_max_angle),
        Hinge::Bottom => (Vec3::y(), Vec3::new(front, body.center.y, z_lo), recipe.flap_max_angle),
    };
    PartSpec {
        part_id,
        joint: JointParams::revolute(axis, origin).expect("unit axis"),
        shape,
        state_range: [0.0, max_angle],
    }
}

/// A drawer filling `row`, sliding out along +x.
pub fn drawer_part(part_id: u32, body: &BoxShape, row: (f64, f64), recipe: &SceneRecipe) -> PartSpec {
    let front = body.center.x + body.half_extents.x;
    let depth = 1.6 * body.half_extents.x;
    let (z_lo, z_hi) = row;
    let center = Vec3::new(front + recipe.door_thickness - 0.5 * depth, body.center.y, 0.5 * (z_lo + z_hi));
    let shape = BoxShape::new(
        center,
        Vec3::new(0.5 * depth, body.half_extents.y - recipe.side_margin, 0.5 * (z_hi - z_lo)),
    );
    PartSpec {
        part_id,
        joint: JointParams::prismatic(Vec3::x(), center).expect("unit axis"),
        shape,
        state_range: [0.0, recipe.drawer_travel * depth],
    }
}
