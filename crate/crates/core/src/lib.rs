//! Motion retargeting between skinned characters of different proportions.
//!
//! A naive copy-rotations transfer gives the starting point; the optimizer then
//! refines target poses so that contacts and near-contacts between sparse
//! key-vertices, and their relation to the floor, match the source motion.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod anim;
pub mod correspondence;
pub mod descriptors;
pub mod error;
pub mod fixtures;
pub mod humanoid;
pub mod job;
pub mod keyverts;
pub mod limb;
pub mod math;
pub mod metrics;
pub mod naive;
pub mod optimizer;
pub mod weighting;

pub use error::{Error, Result};
