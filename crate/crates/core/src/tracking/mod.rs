//! Tracking front-end: EPnP pose initialization, frame-to-frame and
//! map-to-frame tracking, landmark fusion and parallel-line grouping.

mod lines;
mod map;
mod pnp;
mod track;

use thiserror::Error;

pub use lines::{LineFit, ParallelGrouping, fit_line_ransac, group_parallel_lines};
pub use map::{FuseOutcome, MapLine, MapPoint, SparseMap};
pub use pnp::{Correspondence, PnpSolution, epnp, refine_pose, solve_pnp};
pub use track::{TrackingMode, TrackingResult, build_map, track, track_frame_to_frame, track_map_to_frame};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackingError {
    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate configuration")]
    Degenerate,
    #[error("tracking lost at frame {frame}: {shared} usable correspondences")]
    TrackingLost { frame: usize, shared: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("invalid tracking configuration: {0}")]
    InvalidConfig(String),
}

/// Fusion thresholds and solver limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingConfig {
    /// Largest distance (m) a point merge may move a landmark.
    pub radius: f64,
    /// Largest direction angle (deg) between merged lines.
    pub line_angle_deg: f64,
    /// Largest midpoint-to-line distance (m) between merged lines.
    pub line_distance: f64,
    pub pnp_iterations: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self { radius: 0.05, line_angle_deg: 5.0, line_distance: 0.05, pnp_iterations: 10 }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<(), TrackingError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.radius) || !positive(self.line_angle_deg) || !positive(self.line_distance) {
            return Err(TrackingError::InvalidConfig("thresholds must be positive".into()));
        }
        Ok(())
    }
}
