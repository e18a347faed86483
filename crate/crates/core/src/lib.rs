//! Geometry toolkit for object pose estimation: SE(3)/Sim(3)/SA(3) algebra,
//! weighted Umeyama alignment, NOCS-based absolute pose recovery, keypoint
//! attention math, training losses with analytic gradients, the pose
//! evaluation metrics, and a synthetic-scene oracle with a CLI harness.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alignment;
pub mod camera;
pub mod error;
pub mod harness;
pub mod keypoints;
pub mod losses;
pub mod metrics;
pub mod random;
pub mod synth;
pub mod transforms;

pub use error::{GeomError, Result};
