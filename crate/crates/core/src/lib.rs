//! Point/line SLAM benchmark toolkit.
//!
//! Generates synthetic point and line measurement sequences with exact
//! ground truth, runs a frame-to-frame / map-to-frame tracking baseline,
//! builds co-visibility factor graphs, refines them with point-only or
//! point+line bundle adjustment, and scores trajectories with ATE/RPE.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::needless_range_loop)]

pub mod geometry;
pub mod sequence;
pub mod simulator;
pub mod factor_graph;
pub mod io;
pub mod tracking;
pub mod optimizer;
pub mod evaluation;
