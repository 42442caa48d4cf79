//! Trajectory error metrics: ATE after rigid alignment, and RPE.
//!
//! Inputs are `T_{c,w}` poses as stored everywhere else in the crate;
//! metrics are computed on the camera-to-world poses derived from them.

use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::{GeometryError, Pose, rigid_align};
use crate::io::Trajectory;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectories differ in length ({est} estimated vs {gt} ground-truth poses)")]
    LengthMismatch { est: usize, gt: usize },
    #[error("frame ids differ at position {index}: {est} vs {gt}")]
    FrameMismatch { index: usize, est: usize, gt: usize },
    #[error("need at least {needed} poses, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid frame gap {0}")]
    InvalidDelta(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Summary statistics of a list of errors. `std` is the population
/// standard deviation, so `rmse^2 = mean^2 + std^2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricSummary {
    pub count: usize,
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub std: f64,
    pub max: f64,
}

impl MetricSummary {
    pub fn from_errors(errors: &[f64]) -> Self {
        if errors.is_empty() {
            return Self::default();
        }
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let sq = errors.iter().map(|e| e * e).sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
        Self { count: errors.len(), rmse: sq.sqrt(), mean, median, std: var.sqrt(), max: sorted[sorted.len() - 1] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            count: self.count,
            rmse: self.rmse * factor,
            mean: self.mean * factor,
            median: self.median * factor,
            std: self.std * factor,
            max: self.max * factor,
        }
    }
}

/// Per-frame (or per-pair) translation (m) and rotation (deg) errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    /// Frame id of each entry (the first frame of the pair for RPE).
    pub frame_ids: Vec<usize>,
    pub translation: Vec<f64>,
    pub rotation_deg: Vec<f64>,
}

impl ErrorSeries {
    pub fn translation_summary(&self) -> MetricSummary {
        MetricSummary::from_errors(&self.translation)
    }

    pub fn rotation_summary(&self) -> MetricSummary {
        MetricSummary::from_errors(&self.rotation_deg)
    }

    /// `frame_id,err_trans_m,err_rot_deg` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_id,err_trans_m,err_rot_deg\n");
        for i in 0..self.frame_ids.len() {
            let _ = writeln!(out, "{},{},{}", self.frame_ids[i], self.translation[i], self.rotation_deg[i]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AteResult {
    /// Transform applied to the estimated camera positions (world frame).
    pub alignment: Pose,
    pub errors: ErrorSeries,
}

fn check_pair(est: &Trajectory, gt: &Trajectory, min_len: usize) -> Result<(), EvalError> {
    if est.len() != gt.len() {
        return Err(EvalError::LengthMismatch { est: est.len(), gt: gt.len() });
    }
    if let Some(index) = est.frame_ids.iter().zip(&gt.frame_ids).position(|(a, b)| a != b) {
        return Err(EvalError::FrameMismatch { index, est: est.frame_ids[index], gt: gt.frame_ids[index] });
    }
    if est.len() < min_len {
        return Err(EvalError::TooShort { needed: min_len, got: est.len() });
    }
    Ok(())
}

/// Least-squares rigid transform (no scale) taking the estimated camera
/// centres onto the ground-truth ones.
pub fn align_se3(est: &Trajectory, gt: &Trajectory) -> Result<Pose, EvalError> {
    check_pair(est, gt, 2)?;
    let src: Vec<_> = est.poses.iter().map(Pose::camera_center).collect();
    let dst: Vec<_> = gt.poses.iter().map(Pose::camera_center).collect();
    Ok(rigid_align(&src, &dst)?)
}

/// Absolute trajectory error after [`align_se3`].
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<AteResult, EvalError> {
    let g = align_se3(est, gt)?;
    let mut errors = ErrorSeries { frame_ids: gt.frame_ids.clone(), translation: vec![], rotation_deg: vec![] };
    for (e, t) in est.poses.iter().zip(&gt.poses) {
        // aligned camera-to-world pose of the estimate
        let e_wc = g.compose(&e.inverse());
        let t_wc = t.inverse();
        errors.translation.push((e_wc.translation() - t_wc.translation()).norm());
        errors.rotation_deg.push(t.compose(&e_wc).angle().to_degrees());
    }
    Ok(AteResult { alignment: g, errors })
}

/// Relative pose error over frame gap `delta`:
/// `E_i = (G_i^-1 G_{i+delta})^-1 (P_i^-1 P_{i+delta})` on camera-to-world
/// poses `G` (ground truth) and `P` (estimate).
pub fn rpe(est: &Trajectory, gt: &Trajectory, delta: usize) -> Result<ErrorSeries, EvalError> {
    if delta == 0 {
        return Err(EvalError::InvalidDelta(delta));
    }
    check_pair(est, gt, delta + 1)?;
    let mut errors = ErrorSeries { frame_ids: vec![], translation: vec![], rotation_deg: vec![] };
    for i in 0..gt.len() - delta {
        // with T = P^-1 (world-to-camera), P_i^-1 P_j = T_i T_j^-1
        let rel_gt = gt.poses[i].compose(&gt.poses[i + delta].inverse());
        let rel_est = est.poses[i].compose(&est.poses[i + delta].inverse());
        let e = rel_gt.inverse().compose(&rel_est);
        errors.frame_ids.push(gt.frame_ids[i]);
        errors.translation.push(e.translation().norm());
        errors.rotation_deg.push(e.angle().to_degrees());
    }
    Ok(errors)
}
