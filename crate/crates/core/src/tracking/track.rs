//! Frame-to-frame and map-to-frame tracking over a measurement sequence.

use nalgebra::Vector3;

use super::pnp::{Correspondence, solve_pnp};
use super::{SparseMap, TrackingConfig, TrackingError};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::sequence::{Endpoint, Frame, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackingMode {
    FrameToFrame,
    MapToFrame,
}

#[derive(Debug, Clone)]
pub struct TrackingResult {
    /// Estimated `T_{c,w}` per frame; frame 0 is the ground-truth pose.
    pub poses: Vec<Pose>,
    /// Mean PnP reprojection error per frame (0 for frame 0).
    pub reprojection_errors: Vec<f64>,
    /// Present for map-to-frame tracking.
    pub map: Option<SparseMap>,
}

fn to_world(pose_inv: &Pose, k: &CameraIntrinsics, e: &Endpoint) -> Option<Vector3<f64>> {
    k.backproject(&e.pixel, e.depth).ok().map(|pc| pose_inv.transform_point(&pc))
}

fn locate(frame: usize, corrs: &[Correspondence], k: &CameraIntrinsics, cfg: &TrackingConfig) -> Result<(Pose, f64), TrackingError> {
    let lost = TrackingError::TrackingLost { frame, shared: corrs.len() };
    if corrs.len() < 4 {
        return Err(lost);
    }
    solve_pnp(corrs, k, cfg.pnp_iterations).map(|s| (s.pose, s.mean_reprojection_error)).map_err(|_| lost)
}

/// Chains PnP between consecutive frames: frame `j - 1` measurements are
/// back-projected with its estimated pose and matched by id in frame `j`.
pub fn track_frame_to_frame(seq: &Sequence, cfg: &TrackingConfig) -> Result<TrackingResult, TrackingError> {
    let k = &seq.intrinsics;
    let first = *seq.groundtruth.first().ok_or(TrackingError::EmptySequence)?;
    let mut poses = vec![first];
    let mut errors = vec![0.0];
    for j in 1..seq.len() {
        let prev: &Frame = &seq.frames[j - 1];
        let prev_inv = poses[j - 1].inverse();
        let corrs: Vec<Correspondence> = seq.frames[j]
            .points
            .iter()
            .filter_map(|m| {
                let p = prev.point(m.landmark)?;
                let world = to_world(&prev_inv, k, &Endpoint { pixel: p.pixel, depth: p.depth })?;
                Some(Correspondence { world, pixel: m.pixel })
            })
            .collect();
        let (pose, err) = locate(j, &corrs, k, cfg)?;
        poses.push(pose);
        errors.push(err);
    }
    Ok(TrackingResult { poses, reprojection_errors: errors, map: None })
}

fn fuse_frame(map: &mut SparseMap, frame: &Frame, pose: &Pose, k: &CameraIntrinsics, cfg: &TrackingConfig) {
    let inv = pose.inverse();
    for m in &frame.points {
        if let Some(w) = to_world(&inv, k, &Endpoint { pixel: m.pixel, depth: m.depth }) {
            map.fuse_point(w, Some(m.landmark), cfg.radius);
        }
    }
    for m in &frame.lines {
        if let (Some(s), Some(e)) = (to_world(&inv, k, &m.start), to_world(&inv, k, &m.end)) {
            if s != e {
                map.fuse_line(s, e, Some(m.landmark), cfg.line_angle_deg, cfg.line_distance);
            }
        }
    }
}

/// Fuses every frame into a fresh map using the given per-frame poses, as
/// map-to-frame tracking does. Gives frame-to-frame results a landmark map.
pub fn build_map(seq: &Sequence, poses: &[Pose], cfg: &TrackingConfig) -> Result<SparseMap, TrackingError> {
    cfg.validate()?;
    if poses.len() != seq.len() {
        return Err(TrackingError::InsufficientData { needed: seq.len(), got: poses.len() });
    }
    let mut map = SparseMap::new();
    for (frame, pose) in seq.frames.iter().zip(poses) {
        fuse_frame(&mut map, frame, pose, &seq.intrinsics, cfg);
    }
    map.group_lines(cfg.line_angle_deg);
    Ok(map)
}

/// Localizes every frame against the fused map, then fuses its
/// measurements. The map starts from frame 0 at the ground-truth pose.
pub fn track_map_to_frame(seq: &Sequence, cfg: &TrackingConfig) -> Result<TrackingResult, TrackingError> {
    cfg.validate()?;
    let k = &seq.intrinsics;
    let first = *seq.groundtruth.first().ok_or(TrackingError::EmptySequence)?;
    let mut map = SparseMap::new();
    fuse_frame(&mut map, &seq.frames[0], &first, k, cfg);
    let mut poses = vec![first];
    let mut errors = vec![0.0];
    for j in 1..seq.len() {
        let frame = &seq.frames[j];
        let corrs: Vec<Correspondence> = frame
            .points
            .iter()
            .filter_map(|m| map.point(m.landmark).map(|p| Correspondence { world: p.position, pixel: m.pixel }))
            .collect();
        let (pose, err) = locate(j, &corrs, k, cfg)?;
        fuse_frame(&mut map, frame, &pose, k, cfg);
        poses.push(pose);
        errors.push(err);
    }
    map.group_lines(cfg.line_angle_deg);
    Ok(TrackingResult { poses, reprojection_errors: errors, map: Some(map) })
}

pub fn track(seq: &Sequence, mode: TrackingMode, cfg: &TrackingConfig) -> Result<TrackingResult, TrackingError> {
    match mode {
        TrackingMode::FrameToFrame => track_frame_to_frame(seq, cfg),
        TrackingMode::MapToFrame => track_map_to_frame(seq, cfg),
    }
}
