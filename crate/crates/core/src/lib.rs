//! Dual-lane pose-graph optimization: a LiDAR odometry lane regularized on the
//! elevation axis by a parallel leg-odometry lane, plus the simulation and
//! evaluation harness used to measure loop-closure elevation drift.

// `!(a > b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod eval;
pub mod factors;
pub mod geometry;
pub mod io;
pub mod lanes;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
pub use factors::{CouplingSigmas, DiagonalNoise, Factor, NodeId};
pub use geometry::{Pose3, Twist};
pub use solver::{Graph, SolveStats, SolverSettings, Values};
