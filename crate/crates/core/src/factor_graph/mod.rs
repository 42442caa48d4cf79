//! Co-visibility factor graph over camera poses, point landmarks and line
//! landmarks, with the point and line re-projection residuals and their
//! analytic Jacobians.
//!
//! Pose increments are left-multiplicative, `T <- Exp(delta) T` with
//! `delta = (omega, v)`. Points are updated in Euclidean coordinates and
//! lines through the four-parameter orthonormal increment. Residuals are
//! purely 2D; measured depths only seed the landmark positions.

mod residuals;

pub use residuals::{
    PoseJacobian, line_jacobians, line_residual, point_jacobians, point_residual, project_line, project_line_from_points,
};

use std::collections::{BTreeMap, HashMap};

use nalgebra::{Vector2, Vector3, Vector4};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, OrthonormalLine, PluckerLine, Pose};
use crate::sequence::{LineId, PointId, Sequence};

/// Tolerance of the Plücker constraint for line vertices, relative to `|n||d| + 1`.
pub const PLUCKER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FactorError {
    #[error("point lies behind the camera")]
    BehindCamera,
    #[error("line projects degenerately (passes through the camera center)")]
    DegenerateProjection,
    #[error("{kind} landmark {id} is observed but missing from the map")]
    MissingLandmark { kind: &'static str, id: u32 },
    #[error("trajectory has {got} poses but the sequence has {expected} frames")]
    TrajectoryLength { expected: usize, got: usize },
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVertex {
    pub id: usize,
    pub pose: Pose,
    pub fixed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointVertex {
    pub id: PointId,
    pub position: Vector3<f64>,
}

/// Line vertex storing Plücker coordinates for evaluation and the cached
/// orthonormal frame used for updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineVertex {
    pub id: LineId,
    plucker: PluckerLine,
    ortho: OrthonormalLine,
}

impl LineVertex {
    pub fn new(id: LineId, plucker: PluckerLine) -> Result<Self, FactorError> {
        if !plucker.is_finite() || !plucker.satisfies_constraint(PLUCKER_TOLERANCE) {
            return Err(FactorError::InvalidGraph(format!("line {id} violates the Plücker constraint")));
        }
        let ortho = OrthonormalLine::from_plucker(&plucker)?;
        Ok(Self { id, plucker, ortho })
    }

    pub fn plucker(&self) -> &PluckerLine {
        &self.plucker
    }

    pub fn orthonormal(&self) -> &OrthonormalLine {
        &self.ortho
    }

    /// Applies an orthonormal increment and re-derives both views.
    pub fn updated(&self, delta: &Vector4<f64>) -> Self {
        let plucker = self.ortho.update(delta).to_plucker();
        let ortho = OrthonormalLine::from_plucker(&plucker).unwrap_or_else(|_| self.ortho.update(delta));
        Self { id: self.id, plucker, ortho }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointFactor {
    /// Index into [`FactorGraph::poses`].
    pub pose: usize,
    /// Index into [`FactorGraph::points`].
    pub point: usize,
    pub measurement: Vector2<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFactor {
    pub pose: usize,
    /// Index into [`FactorGraph::lines`].
    pub line: usize,
    pub start: Vector2<f64>,
    pub end: Vector2<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorGraph {
    /// Required as soon as the graph has factors.
    pub camera: Option<CameraIntrinsics>,
    pub poses: Vec<PoseVertex>,
    pub points: Vec<PointVertex>,
    pub lines: Vec<LineVertex>,
    pub point_factors: Vec<PointFactor>,
    pub line_factors: Vec<LineFactor>,
}

/// Initial landmark estimates keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InitialLandmarks {
    pub points: HashMap<PointId, Vector3<f64>>,
    pub lines: HashMap<LineId, PluckerLine>,
}

impl InitialLandmarks {
    pub fn from_groundtruth(seq: &Sequence) -> Result<Self, FactorError> {
        let points = seq.point_landmarks.iter().map(|l| (l.id, l.position)).collect();
        let lines = seq.line_landmarks.iter().map(|l| Ok((l.id, l.plucker()?))).collect::<Result<_, GeometryError>>()?;
        Ok(Self { points, lines })
    }
}

/// Squared-residual contributions of one evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CostBreakdown {
    pub points: f64,
    pub lines: f64,
    /// Factors skipped because they could not be evaluated.
    pub invalid: usize,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.points + self.lines
    }
}

impl FactorGraph {
    pub fn is_empty(&self) -> bool {
        self.poses.is_empty() && self.points.is_empty() && self.lines.is_empty()
    }

    pub fn pose_index(&self) -> HashMap<usize, usize> {
        self.poses.iter().enumerate().map(|(i, v)| (v.id, i)).collect()
    }

    /// Checks references, the gauge, the Plücker constraint and finiteness.
    pub fn validate(&self) -> Result<(), FactorError> {
        let bad = |m: String| Err(FactorError::InvalidGraph(m));
        let has_factors = !self.point_factors.is_empty() || !self.line_factors.is_empty();
        if has_factors && self.camera.is_none() {
            return bad("graph has factors but no camera".into());
        }
        if let Some(k) = &self.camera {
            k.validate()?;
        }
        if has_factors && !self.poses.iter().any(|p| p.fixed) {
            return bad("no fixed pose".into());
        }
        let mut ids = std::collections::HashSet::new();
        if !self.poses.iter().all(|p| ids.insert(p.id)) {
            return bad("duplicate pose id".into());
        }
        let mut ids = std::collections::HashSet::new();
        if !self.points.iter().all(|p| ids.insert(p.id)) {
            return bad("duplicate point id".into());
        }
        let mut ids = std::collections::HashSet::new();
        if !self.lines.iter().all(|l| ids.insert(l.id)) {
            return bad("duplicate line id".into());
        }
        for p in &self.points {
            if !p.position.iter().all(|v| v.is_finite()) {
                return bad(format!("point {} is not finite", p.id));
            }
        }
        for l in &self.lines {
            if !l.plucker.satisfies_constraint(PLUCKER_TOLERANCE) {
                return bad(format!("line {} violates the Plücker constraint", l.id));
            }
        }
        for f in &self.point_factors {
            if f.pose >= self.poses.len() || f.point >= self.points.len() {
                return bad("point factor references a missing vertex".into());
            }
            if !f.measurement.iter().all(|v| v.is_finite()) || !(f.weight > 0.0) || !f.weight.is_finite() {
                return bad("point factor has a non-finite measurement or weight".into());
            }
        }
        for f in &self.line_factors {
            if f.pose >= self.poses.len() || f.line >= self.lines.len() {
                return bad("line factor references a missing vertex".into());
            }
            if !f.start.iter().chain(f.end.iter()).all(|v| v.is_finite()) || !(f.weight > 0.0) || !f.weight.is_finite() {
                return bad("line factor has a non-finite measurement or weight".into());
            }
        }
        Ok(())
    }

    fn camera_or_err(&self) -> Result<&CameraIntrinsics, FactorError> {
        self.camera.as_ref().ok_or_else(|| FactorError::InvalidGraph("graph has no camera".into()))
    }

    pub fn point_factor_residual(&self, f: &PointFactor) -> Result<Vector2<f64>, FactorError> {
        let k = self.camera_or_err()?;
        point_residual(&f.measurement, &self.points[f.point].position, &self.poses[f.pose].pose, k)
    }

    pub fn line_factor_residual(&self, f: &LineFactor) -> Result<Vector2<f64>, FactorError> {
        let k = self.camera_or_err()?;
        line_residual(&f.start, &f.end, &self.lines[f.line].plucker, &self.poses[f.pose].pose, k)
    }

    /// Weighted squared residuals `sum w |r|^2`; unevaluable factors are
    /// skipped and counted.
    pub fn cost(&self, include_lines: bool) -> CostBreakdown {
        let mut out = CostBreakdown::default();
        for f in &self.point_factors {
            match self.point_factor_residual(f) {
                Ok(r) => out.points += f.weight * r.norm_squared(),
                Err(_) => out.invalid += 1,
            }
        }
        if include_lines {
            for f in &self.line_factors {
                match self.line_factor_residual(f) {
                    Ok(r) => out.lines += f.weight * r.norm_squared(),
                    Err(_) => out.invalid += 1,
                }
            }
        }
        out
    }

    /// Pose estimates ordered by vertex id.
    pub fn trajectory(&self) -> Vec<(usize, Pose)> {
        let mut out: Vec<(usize, Pose)> = self.poses.iter().map(|p| (p.id, p.pose)).collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    pub fn set_weights(&mut self, point_weight: f64, line_weight: f64) {
        self.point_factors.iter_mut().for_each(|f| f.weight = point_weight);
        self.line_factors.iter_mut().for_each(|f| f.weight = line_weight);
    }
}

/// Builds the co-visibility graph: one pose vertex per frame (the first one
/// fixed), one vertex per landmark observed in at least two frames, and one
/// factor per measurement of such a landmark. Factor weights are 1.
pub fn build_covisibility_graph(seq: &Sequence, trajectory: &[Pose], map: &InitialLandmarks) -> Result<FactorGraph, FactorError> {
    if trajectory.len() != seq.frames.len() {
        return Err(FactorError::TrajectoryLength { expected: seq.frames.len(), got: trajectory.len() });
    }
    let tracks = seq.tracks();
    let mut graph = FactorGraph {
        camera: Some(seq.intrinsics),
        poses: trajectory.iter().enumerate().map(|(id, pose)| PoseVertex { id, pose: *pose, fixed: id == 0 }).collect(),
        ..Default::default()
    };

    let mut point_slot = BTreeMap::new();
    for (id, frames) in &tracks.points {
        if frames.len() < 2 {
            continue;
        }
        let position = *map.points.get(id).ok_or(FactorError::MissingLandmark { kind: "point", id: id.0 })?;
        point_slot.insert(*id, graph.points.len());
        graph.points.push(PointVertex { id: *id, position });
    }
    let mut line_slot = BTreeMap::new();
    for (id, frames) in &tracks.lines {
        if frames.len() < 2 {
            continue;
        }
        let line = map.lines.get(id).ok_or(FactorError::MissingLandmark { kind: "line", id: id.0 })?;
        line_slot.insert(*id, graph.lines.len());
        graph.lines.push(LineVertex::new(*id, *line)?);
    }

    for (pose, frame) in seq.frames.iter().enumerate() {
        for m in &frame.points {
            if let Some(&point) = point_slot.get(&m.landmark) {
                graph.point_factors.push(PointFactor { pose, point, measurement: m.pixel, weight: 1.0 });
            }
        }
        for m in &frame.lines {
            if let Some(&line) = line_slot.get(&m.landmark) {
                graph.line_factors.push(LineFactor { pose, line, start: m.start.pixel, end: m.end.pixel, weight: 1.0 });
            }
        }
    }
    Ok(graph)
}
