//! Sparse point/line map with incremental fusion.

use std::collections::HashMap;

use kiddo::SquaredEuclidean;
use kiddo::float::kdtree::KdTree;
use nalgebra::Vector3;

use super::lines::{extent, group_parallel_lines, principal_axis};
use crate::factor_graph::InitialLandmarks;
use crate::geometry::PluckerLine;
use crate::sequence::{GroupId, LineId, ParallelGroup, PointId, direction_angle};

// Large buckets keep the tree tolerant of many points sharing one
// coordinate (points sampled on axis-aligned faces).
type PointTree = KdTree<f64, u64, 3, 256, u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: PointId,
    pub position: Vector3<f64>,
    /// Observations merged into `position` (at least 1).
    pub observations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapLine {
    pub id: LineId,
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    pub observations: usize,
    /// Every endpoint merged so far; the segment is refit over these.
    samples: Vec<Vector3<f64>>,
}

impl MapLine {
    pub fn direction(&self) -> Vector3<f64> {
        self.end - self.start
    }

    pub fn midpoint(&self) -> Vector3<f64> {
        (self.start + self.end) * 0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseOutcome<I> {
    Inserted(I),
    Merged(I),
    /// An id-matched point too far from its landmark; the map is unchanged.
    Rejected(I),
}

impl<I: Copy> FuseOutcome<I> {
    pub fn id(&self) -> I {
        match *self {
            Self::Inserted(id) | Self::Merged(id) | Self::Rejected(id) => id,
        }
    }
}

#[derive(Clone)]
pub struct SparseMap {
    points: Vec<MapPoint>,
    lines: Vec<MapLine>,
    point_slot: HashMap<PointId, usize>,
    line_slot: HashMap<LineId, usize>,
    tree: PointTree,
    pub parallel_groups: Vec<ParallelGroup>,
}

impl Default for SparseMap {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            lines: Vec::new(),
            point_slot: HashMap::new(),
            line_slot: HashMap::new(),
            tree: PointTree::new(),
            parallel_groups: Vec::new(),
        }
    }
}

impl std::fmt::Debug for SparseMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseMap")
            .field("points", &self.points)
            .field("lines", &self.lines)
            .field("parallel_groups", &self.parallel_groups)
            .finish()
    }
}

fn key(p: &Vector3<f64>) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn line_distance(line: &MapLine, p: &Vector3<f64>) -> f64 {
    let d = line.direction();
    (p - line.start).cross(&d).norm() / d.norm()
}

impl SparseMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn points(&self) -> &[MapPoint] {
        &self.points
    }

    pub fn lines(&self) -> &[MapLine] {
        &self.lines
    }

    pub fn point(&self, id: PointId) -> Option<&MapPoint> {
        self.point_slot.get(&id).map(|&i| &self.points[i])
    }

    pub fn line(&self, id: LineId) -> Option<&MapLine> {
        self.line_slot.get(&id).map(|&i| &self.lines[i])
    }

    /// Nearest map point and its distance.
    pub fn nearest_point(&self, p: &Vector3<f64>) -> Option<(&MapPoint, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let nn = self.tree.nearest_one::<SquaredEuclidean>(&key(p));
        Some((&self.points[nn.item as usize], nn.distance.sqrt()))
    }

    fn insert_point(&mut self, id: PointId, position: Vector3<f64>) {
        let slot = self.points.len();
        self.tree.add(&key(&position), slot as u64);
        self.point_slot.insert(id, slot);
        self.points.push(MapPoint { id, position, observations: 1 });
    }

    fn next_point_id(&self) -> PointId {
        PointId(self.points.iter().map(|p| p.id.0 + 1).max().unwrap_or(0))
    }

    fn next_line_id(&self) -> LineId {
        LineId(self.lines.iter().map(|l| l.id.0 + 1).max().unwrap_or(0))
    }

    /// Fuses a world-frame point observation.
    ///
    /// With an id, the candidate is merged into the landmark carrying that
    /// id by running average, unless that would move the landmark by more
    /// than `radius` (then it is rejected). Without an id, the nearest
    /// landmark within `radius` absorbs it; otherwise it becomes a new
    /// landmark. Either way a merge moves a landmark by at most `radius`.
    pub fn fuse_point(&mut self, candidate: Vector3<f64>, id: Option<PointId>, radius: f64) -> FuseOutcome<PointId> {
        let slot = match id {
            Some(id) => match self.point_slot.get(&id) {
                Some(&slot) => slot,
                None => {
                    self.insert_point(id, candidate);
                    return FuseOutcome::Inserted(id);
                }
            },
            None => match self.nearest_point(&candidate) {
                Some((p, dist)) if dist <= radius => self.point_slot[&p.id],
                _ => {
                    let id = self.next_point_id();
                    self.insert_point(id, candidate);
                    return FuseOutcome::Inserted(id);
                }
            },
        };
        let p = &self.points[slot];
        let n = p.observations as f64;
        let step = (candidate - p.position) / (n + 1.0);
        if step.norm() > radius {
            return FuseOutcome::Rejected(p.id);
        }
        let old = p.position;
        let new = old + step;
        self.tree.remove(&key(&old), slot as u64);
        self.tree.add(&key(&new), slot as u64);
        let p = &mut self.points[slot];
        p.position = new;
        p.observations += 1;
        FuseOutcome::Merged(p.id)
    }

    fn accepts(line: &MapLine, start: &Vector3<f64>, end: &Vector3<f64>, angle_deg: f64, dist: f64) -> bool {
        direction_angle(&line.direction(), &(end - start)).to_degrees() <= angle_deg
            && line_distance(line, &((start + end) * 0.5)) <= dist
    }

    /// Fuses a world-frame segment observation. An id-matched segment always
    /// merges into its landmark. Without an id, a merge requires the direction
    /// angle to be at most `angle_deg` and the candidate midpoint to lie within
    /// `dist` of the landmark line. The merged segment is the principal-axis
    /// fit over all endpoints observed so far.
    pub fn fuse_line(
        &mut self,
        start: Vector3<f64>,
        end: Vector3<f64>,
        id: Option<LineId>,
        angle_deg: f64,
        dist: f64,
    ) -> FuseOutcome<LineId> {
        let slot = match id {
            Some(id) => match self.line_slot.get(&id) {
                Some(&slot) => slot,
                None => return self.insert_line(id, start, end),
            },
            None => {
                let best = self
                    .lines
                    .iter()
                    .enumerate()
                    .filter(|(_, l)| Self::accepts(l, &start, &end, angle_deg, dist))
                    .min_by(|(_, a), (_, b)| {
                        let m = (start + end) * 0.5;
                        line_distance(a, &m).total_cmp(&line_distance(b, &m))
                    })
                    .map(|(i, _)| i);
                match best {
                    Some(slot) => slot,
                    None => return self.insert_line(self.next_line_id(), start, end),
                }
            }
        };
        let line = &mut self.lines[slot];
        let reference = line.direction();
        line.samples.extend([start, end]);
        if let Some((c, dir)) = principal_axis(&line.samples) {
            (line.start, line.end) = extent(&line.samples, &c, dir, Some(&reference));
        }
        line.observations += 1;
        FuseOutcome::Merged(line.id)
    }

    fn insert_line(&mut self, id: LineId, start: Vector3<f64>, end: Vector3<f64>) -> FuseOutcome<LineId> {
        self.line_slot.insert(id, self.lines.len());
        self.lines.push(MapLine { id, start, end, observations: 1, samples: vec![start, end] });
        FuseOutcome::Inserted(id)
    }

    /// Groups the map lines by direction. Only group membership is
    /// recorded; the map geometry is left as fused.
    pub fn group_lines(&mut self, angle_deg: f64) {
        let segs: Vec<_> = self.lines.iter().map(|l| (l.start, l.end)).collect();
        let grouping = group_parallel_lines(&segs, angle_deg);
        self.parallel_groups = grouping
            .groups
            .iter()
            .filter(|g| g.len() > 1)
            .enumerate()
            .map(|(i, g)| ParallelGroup { id: GroupId(i as u32), members: g.iter().map(|&j| self.lines[j].id).collect() })
            .collect();
    }

    /// Landmark estimates for graph construction. Lines whose segment has
    /// collapsed are left out.
    pub fn landmarks(&self) -> InitialLandmarks {
        InitialLandmarks {
            points: self.points.iter().map(|p| (p.id, p.position)).collect(),
            lines: self
                .lines
                .iter()
                .filter_map(|l| PluckerLine::from_endpoints(&l.start, &l.end).ok().map(|pl| (l.id, pl)))
                .collect(),
        }
    }

    /// True when the spatial index agrees with the landmark table.
    pub fn index_consistent(&self) -> bool {
        self.tree.size() as usize == self.points.len()
            && self.points.iter().enumerate().all(|(slot, p)| {
                let nn = self.tree.nearest_one::<SquaredEuclidean>(&key(&p.position));
                nn.distance == 0.0 && (nn.item as usize == slot || self.points[nn.item as usize].position == p.position)
            })
            && self.point_slot.len() == self.points.len()
            && self.line_slot.len() == self.lines.len()
    }
}
