//! Per-frame measurement records, landmark tables and the sequence container.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, PluckerLine, Pose};

/// Shortest pixel length a line measurement may have.
pub const MIN_LINE_LEN: f64 = 15.0;

/// Angular tolerance (rad) for members of one parallel group.
pub const PARALLEL_TOLERANCE: f64 = 1e-9;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(PointId, "p");
id_type!(LineId, "l");
id_type!(GroupId, "g");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMeasurement {
    pub landmark: PointId,
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

/// Pixel position and depth of one line endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Endpoint {
    pub pixel: Vector2<f64>,
    pub depth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineMeasurement {
    pub landmark: LineId,
    pub start: Endpoint,
    pub end: Endpoint,
}

impl LineMeasurement {
    pub fn pixel_length(&self) -> f64 {
        (self.end.pixel - self.start.pixel).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLandmark {
    pub id: PointId,
    pub position: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineLandmark {
    pub id: LineId,
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub group: Option<GroupId>,
}

impl LineLandmark {
    pub fn plucker(&self) -> Result<PluckerLine, GeometryError> {
        PluckerLine::from_endpoints(&self.start, &self.end)
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.end - self.start
    }

    pub fn midpoint(&self) -> Vector3<f64> {
        (self.start + self.end) * 0.5
    }
}

/// Measurements of one frame, each list sorted by landmark id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Frame {
    pub points: Vec<PointMeasurement>,
    pub lines: Vec<LineMeasurement>,
}

impl Frame {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.lines.is_empty()
    }

    pub fn point(&self, id: PointId) -> Option<&PointMeasurement> {
        self.points.binary_search_by_key(&id, |m| m.landmark).ok().map(|i| &self.points[i])
    }

    pub fn line(&self, id: LineId) -> Option<&LineMeasurement> {
        self.lines.binary_search_by_key(&id, |m| m.landmark).ok().map(|i| &self.lines[i])
    }
}

/// A set of exactly parallel line landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelGroup {
    pub id: GroupId,
    pub members: Vec<LineId>,
}

/// Frame indices in which each landmark was measured.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tracks {
    pub points: BTreeMap<PointId, Vec<usize>>,
    pub lines: BTreeMap<LineId, Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub intrinsics: CameraIntrinsics,
    /// Ground-truth `T_{c,w}` per frame.
    pub groundtruth: Vec<Pose>,
    pub frames: Vec<Frame>,
    pub point_landmarks: Vec<PointLandmark>,
    pub line_landmarks: Vec<LineLandmark>,
    pub parallel_groups: Vec<ParallelGroup>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{0}")]
pub struct InvariantViolation(pub String);

fn violation(msg: impl Into<String>) -> InvariantViolation {
    InvariantViolation(msg.into())
}

/// Sign-agnostic angle between two directions, accurate near zero.
pub fn direction_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b).abs())
}

fn check_observation(pixel: &Vector2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<(), &'static str> {
    if !(pixel.x.is_finite() && pixel.y.is_finite()) || !k.contains(pixel) {
        return Err("pixel outside image");
    }
    if !depth.is_finite() || depth <= 0.0 {
        return Err("nonpositive depth");
    }
    Ok(())
}

pub fn check_point_measurement(m: &PointMeasurement, k: &CameraIntrinsics) -> Result<(), InvariantViolation> {
    check_observation(&m.pixel, m.depth, k).map_err(|e| violation(format!("{e} (point {})", m.landmark)))
}

pub fn check_line_measurement(m: &LineMeasurement, k: &CameraIntrinsics) -> Result<(), InvariantViolation> {
    for e in [&m.start, &m.end] {
        check_observation(&e.pixel, e.depth, k).map_err(|e| violation(format!("{e} (line {})", m.landmark)))?;
    }
    if m.start.pixel == m.end.pixel {
        return Err(violation(format!("line {} has coincident endpoints", m.landmark)));
    }
    if m.pixel_length() < MIN_LINE_LEN {
        return Err(violation(format!("line {} shorter than {} px", m.landmark, MIN_LINE_LEN)));
    }
    Ok(())
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn point_index(&self) -> HashMap<PointId, usize> {
        self.point_landmarks.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
    }

    pub fn line_index(&self) -> HashMap<LineId, usize> {
        self.line_landmarks.iter().enumerate().map(|(i, l)| (l.id, i)).collect()
    }

    pub fn tracks(&self) -> Tracks {
        let mut tracks = Tracks::default();
        for (f, frame) in self.frames.iter().enumerate() {
            for m in &frame.points {
                tracks.points.entry(m.landmark).or_default().push(f);
            }
            for m in &frame.lines {
                tracks.lines.entry(m.landmark).or_default().push(f);
            }
        }
        tracks
    }

    /// Checks every invariant of the data model.
    pub fn validate(&self) -> Result<(), InvariantViolation> {
        self.intrinsics.validate().map_err(|e| violation(e.to_string()))?;
        if self.groundtruth.len() != self.frames.len() {
            return Err(violation(format!(
                "{} ground-truth poses for {} frames",
                self.groundtruth.len(),
                self.frames.len()
            )));
        }
        for (i, pose) in self.groundtruth.iter().enumerate() {
            let q = pose.quaternion();
            if !pose.translation().iter().chain(q.coords.iter()).all(|v| v.is_finite()) {
                return Err(violation(format!("non-finite pose at frame {i}")));
            }
        }
        let mut point_ids = BTreeSet::new();
        for l in &self.point_landmarks {
            if !l.position.iter().all(|v| v.is_finite()) {
                return Err(violation(format!("non-finite landmark {}", l.id)));
            }
            if !point_ids.insert(l.id) {
                return Err(violation(format!("duplicate landmark {}", l.id)));
            }
        }
        let mut line_ids = BTreeMap::new();
        for l in &self.line_landmarks {
            let plucker = l.plucker().map_err(|e| violation(format!("line {}: {e}", l.id)))?;
            if !plucker.is_finite() {
                return Err(violation(format!("non-finite line {}", l.id)));
            }
            if line_ids.insert(l.id, l).is_some() {
                return Err(violation(format!("duplicate line {}", l.id)));
            }
        }
        for (f, frame) in self.frames.iter().enumerate() {
            let ctx = |e: InvariantViolation| violation(format!("frame {f}: {}", e.0));
            let mut prev = None;
            for m in &frame.points {
                if prev.is_some_and(|p| p >= m.landmark) {
                    return Err(ctx(violation("point measurements not strictly ordered by id")));
                }
                prev = Some(m.landmark);
                if !point_ids.contains(&m.landmark) {
                    return Err(ctx(violation(format!("dangling landmark id {}", m.landmark))));
                }
                check_point_measurement(m, &self.intrinsics).map_err(ctx)?;
            }
            let mut prev = None;
            for m in &frame.lines {
                if prev.is_some_and(|p| p >= m.landmark) {
                    return Err(ctx(violation("line measurements not strictly ordered by id")));
                }
                prev = Some(m.landmark);
                if !line_ids.contains_key(&m.landmark) {
                    return Err(ctx(violation(format!("dangling landmark id {}", m.landmark))));
                }
                check_line_measurement(m, &self.intrinsics).map_err(ctx)?;
            }
        }
        let mut group_ids = BTreeSet::new();
        let mut grouped = BTreeMap::new();
        for g in &self.parallel_groups {
            if !group_ids.insert(g.id) {
                return Err(violation(format!("duplicate group {}", g.id)));
            }
            let mut reference: Option<Vector3<f64>> = None;
            for id in &g.members {
                let line = line_ids
                    .get(id)
                    .ok_or_else(|| violation(format!("group {} references unknown line {id}", g.id)))?;
                if grouped.insert(*id, g.id).is_some() {
                    return Err(violation(format!("line {id} belongs to more than one group")));
                }
                let dir = line.direction().normalize();
                match reference {
                    None => reference = Some(dir),
                    Some(r) if direction_angle(&r, &dir) > PARALLEL_TOLERANCE => {
                        return Err(violation(format!("group {} member {id} is not parallel", g.id)));
                    }
                    Some(_) => {}
                }
            }
        }
        for l in &self.line_landmarks {
            if l.group != grouped.get(&l.id).copied() {
                return Err(violation(format!("group tag of line {} disagrees with group table", l.id)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    pub(crate) fn toy_sequence() -> Sequence {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
        let groundtruth: Vec<Pose> = (0..3)
            .map(|i| Pose::new(UnitQuaternion::from_euler_angles(0.0, 0.01 * i as f64, 0.0), Vector3::new(0.1 * i as f64, 0.0, 0.0)))
            .collect();
        let point_landmarks = vec![
            PointLandmark { id: PointId(0), position: Vector3::new(0.2, 0.1, 3.0) },
            PointLandmark { id: PointId(3), position: Vector3::new(-0.4, 0.3, 4.0) },
        ];
        let line_landmarks = vec![
            LineLandmark { id: LineId(0), start: Vector3::new(-1.0, -0.5, 4.0), end: Vector3::new(1.0, -0.5, 4.0), group: Some(GroupId(0)) },
            LineLandmark { id: LineId(1), start: Vector3::new(-1.0, 0.5, 4.0), end: Vector3::new(1.0, 0.5, 4.0), group: Some(GroupId(0)) },
        ];
        let frames = groundtruth
            .iter()
            .map(|pose| {
                let points = point_landmarks
                    .iter()
                    .map(|l| {
                        let pc = pose.transform_point(&l.position);
                        PointMeasurement { landmark: l.id, pixel: k.project(&pc).unwrap(), depth: pc.z }
                    })
                    .collect();
                let lines = line_landmarks
                    .iter()
                    .map(|l| {
                        let ep = |p: &Vector3<f64>| {
                            let pc = pose.transform_point(p);
                            Endpoint { pixel: k.project(&pc).unwrap(), depth: pc.z }
                        };
                        LineMeasurement { landmark: l.id, start: ep(&l.start), end: ep(&l.end) }
                    })
                    .collect();
                Frame { points, lines }
            })
            .collect();
        Sequence {
            intrinsics: k,
            groundtruth,
            frames,
            point_landmarks,
            line_landmarks,
            parallel_groups: vec![ParallelGroup { id: GroupId(0), members: vec![LineId(0), LineId(1)] }],
        }
    }

    #[test]
    fn toy_sequence_is_valid() {
        let seq = toy_sequence();
        seq.validate().unwrap();
        let tracks = seq.tracks();
        assert_eq!(tracks.points[&PointId(3)], vec![0, 1, 2]);
        assert_eq!(tracks.lines.len(), 2);
    }

    #[test]
    fn dangling_id_is_rejected() {
        let mut seq = toy_sequence();
        seq.frames[1].points[0].landmark = PointId(1);
        let err = seq.validate().unwrap_err();
        assert!(err.0.contains("dangling"), "{err}");
    }

    #[test]
    fn nonparallel_group_is_rejected() {
        let mut seq = toy_sequence();
        seq.line_landmarks[1].end.y += 1e-6;
        assert!(seq.validate().unwrap_err().0.contains("not parallel"));
    }

    #[test]
    fn short_line_is_rejected() {
        let mut seq = toy_sequence();
        let m = &mut seq.frames[0].lines[0];
        m.end.pixel = m.start.pixel + Vector2::new(3.0, 0.0);
        assert!(seq.validate().unwrap_err().0.contains("shorter"));
    }

    #[test]
    fn angle_is_sign_agnostic_and_exact_at_zero() {
        let a = Vector3::new(0.3, -0.2, 0.9).normalize();
        assert_eq!(direction_angle(&a, &a), 0.0);
        assert!(direction_angle(&a, &(-a)) < 1e-15);
        assert!((direction_angle(&Vector3::x(), &Vector3::y()) - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
    }
}
