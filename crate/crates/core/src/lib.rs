//! Articulated-object modeling and adaptive manipulation.
//!
//! The pipeline runs from synthetic scenes with exact per-point articulation
//! fields, through part clustering and joint voting, to receding-horizon
//! trajectory execution with joint-parameter refinement.

// `!(x >= 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod experiment;
pub mod formats;
pub mod generator;
pub mod grasp;
pub mod kinematics;
pub mod losses;
pub mod metrics;
pub mod planner;
pub mod refine;
pub mod scene;
pub mod voting;

pub use error::{Error, Result};
pub use kinematics::{JointParams, JointType, Vec3};
pub use scene::{ArticulatedObject, LabeledCloud, PerPointFields, Semantic};
