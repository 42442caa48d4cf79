use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::geometry::CameraIntrinsics;
use crate::sequence::{Frame, Sequence};

/// Cell edge length (px) of the occupancy grid.
pub const CELL_SIZE: f64 = 10.0;

pub const STATS_HEADER: &str = "frame_id,num_points,num_lines,occupied_cells";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStats {
    pub frame_id: usize,
    pub num_points: usize,
    pub num_lines: usize,
    /// Distinct 10x10 px cells holding a point or a line endpoint.
    pub occupied_cells: usize,
}

/// Counts for one frame. Cells are half-open, anchored at pixel (0, 0);
/// only point positions and line endpoints occupy cells.
pub fn compute_frame_stats(frame_id: usize, frame: &Frame, k: &CameraIntrinsics) -> FrameStats {
    let cols = (k.width as f64 / CELL_SIZE).ceil() as usize;
    let cell = |u: &Vector2<f64>| (u.y / CELL_SIZE).floor() as usize * cols + (u.x / CELL_SIZE).floor() as usize;
    let mut cells: Vec<usize> = frame
        .points
        .iter()
        .map(|m| cell(&m.pixel))
        .chain(frame.lines.iter().flat_map(|m| [cell(&m.start.pixel), cell(&m.end.pixel)]))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    FrameStats { frame_id, num_points: frame.points.len(), num_lines: frame.lines.len(), occupied_cells: cells.len() }
}

pub fn compute_stats(seq: &Sequence) -> Vec<FrameStats> {
    seq.frames.iter().enumerate().map(|(i, f)| compute_frame_stats(i, f, &seq.intrinsics)).collect()
}

pub fn stats_csv(stats: &[FrameStats]) -> String {
    let mut out = String::from(STATS_HEADER);
    out.push('\n');
    for s in stats {
        let _ = writeln!(out, "{},{},{},{}", s.frame_id, s.num_points, s.num_lines, s.occupied_cells);
    }
    out
}
