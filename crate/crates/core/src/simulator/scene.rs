use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::sequence::{GroupId, LineId, LineLandmark, ParallelGroup, PointId, PointLandmark};

/// Lines whose infinite extension passes closer than this to the world
/// origin are not emitted (near-zero Plücker moment).
pub const MIN_ORIGIN_DISTANCE: f64 = 0.05;

/// Axis-aligned cuboid given by its center and half extents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneBox {
    pub center: Vector3<f64>,
    pub half_extents: Vector3<f64>,
}

impl SceneBox {
    pub fn new(center: Vector3<f64>, half_extents: Vector3<f64>) -> Self {
        Self { center, half_extents }
    }

    pub fn min(&self) -> Vector3<f64> {
        self.center - self.half_extents
    }

    pub fn max(&self) -> Vector3<f64> {
        self.center + self.half_extents
    }

    /// Strict interior test.
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| (p[i] - self.center[i]).abs() < self.half_extents[i])
    }

    /// Signed box distance `max_i(|p_i - c_i| - e_i)`; zero on the surface.
    pub fn surface_offset(&self, p: &Vector3<f64>) -> f64 {
        (0..3).map(|i| (p[i] - self.center[i]).abs() - self.half_extents[i]).fold(f64::MIN, f64::max)
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: &Vector3<f64>) -> f64 {
        let d = Vector3::from_fn(|i, _| ((p[i] - self.center[i]).abs() - self.half_extents[i]).max(0.0));
        d.norm()
    }

    /// Entry distance of the ray `origin + t * dir` (slab test), if any hit
    /// with `t_exit >= 0`. A ray starting inside reports a negative entry.
    pub fn ray_entry(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        let (lo, hi) = (self.min(), self.max());
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        for i in 0..3 {
            if dir[i] == 0.0 {
                if origin[i] < lo[i] || origin[i] > hi[i] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[i];
            let (mut t0, mut t1) = ((lo[i] - origin[i]) * inv, (hi[i] - origin[i]) * inv);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
        }
        (t_enter <= t_exit && t_exit >= 0.0).then_some(t_enter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub boxes: Vec<SceneBox>,
    /// Point landmarks per square meter of box surface.
    pub points_per_m2: f64,
    /// Line segments sampled on each face, in addition to the box edges.
    pub lines_per_face: usize,
    pub edge_lines: bool,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.boxes.is_empty() {
            return Err(SimError::InvalidSpec("scene needs at least one box".into()));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let finite = b.center.iter().chain(b.half_extents.iter()).all(|v| v.is_finite());
            if !finite || b.half_extents.iter().any(|&e| e <= 0.0) {
                return Err(SimError::InvalidSpec(format!("box {i} needs positive finite extents")));
            }
            if b.distance_to(&Vector3::zeros()) < 0.5 {
                return Err(SimError::InvalidSpec(format!("box {i} lies within 0.5 m of the world origin")));
            }
        }
        if !(self.points_per_m2 >= 0.0) || !self.points_per_m2.is_finite() {
            return Err(SimError::InvalidSpec("points_per_m2 must be non-negative".into()));
        }
        Ok(())
    }
}

/// Landmark tables plus the box geometry used for occlusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub boxes: Vec<SceneBox>,
    pub points: Vec<PointLandmark>,
    pub lines: Vec<LineLandmark>,
    pub parallel_groups: Vec<ParallelGroup>,
    /// Sampled lines dropped for passing too close to the origin.
    pub skipped_lines: usize,
}

impl Scene {
    pub fn center(&self) -> Vector3<f64> {
        let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for b in &self.boxes {
            lo = lo.inf(&b.min());
            hi = hi.sup(&b.max());
        }
        (lo + hi) * 0.5
    }
}

/// One face of a box: fixed `axis` at `sign`, spanned by axes `a` and `b`.
struct Face {
    origin: Vector3<f64>,
    a: usize,
    b: usize,
    ea: f64,
    eb: f64,
}

impl Face {
    fn all(bx: &SceneBox) -> Vec<Face> {
        let mut faces = Vec::with_capacity(6);
        for axis in 0..3 {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            for sign in [-1.0, 1.0] {
                let mut origin = bx.center;
                origin[axis] += sign * bx.half_extents[axis];
                faces.push(Face { origin, a, b, ea: bx.half_extents[a], eb: bx.half_extents[b] });
            }
        }
        faces
    }

    fn area(&self) -> f64 {
        4.0 * self.ea * self.eb
    }

    fn at(&self, sa: f64, sb: f64) -> Vector3<f64> {
        let mut p = self.origin;
        p[self.a] += sa;
        p[self.b] += sb;
        p
    }
}

fn box_edges(bx: &SceneBox) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let (lo, hi) = (bx.min(), bx.max());
    let mut edges = Vec::with_capacity(12);
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for va in [lo[a], hi[a]] {
            for vb in [lo[b], hi[b]] {
                let mut s = Vector3::zeros();
                s[a] = va;
                s[b] = vb;
                let mut e = s;
                s[axis] = lo[axis];
                e[axis] = hi[axis];
                edges.push((s, e));
            }
        }
    }
    edges
}

fn sample_face_line(face: &Face, kind: usize, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
    let inset = 0.9;
    match kind {
        // along `a` (or `b`), oriented towards the positive axis
        0 | 1 => {
            let (along, across, e_along, e_across) =
                if kind == 0 { (0, 1, face.ea, face.eb) } else { (1, 0, face.eb, face.ea) };
            let len = rng.random_range(0.4..0.9) * 2.0 * e_along;
            let start = rng.random_range(-e_along..(e_along - len));
            let offset = rng.random_range(-inset * e_across..inset * e_across);
            let mut s = [0.0; 2];
            let mut e = [0.0; 2];
            s[along] = start;
            e[along] = start + len;
            s[across] = offset;
            e[across] = offset;
            (face.at(s[0], s[1]), face.at(e[0], e[1]))
        }
        _ => {
            let min_len = 0.5 * face.ea.min(face.eb);
            loop {
                let p = (
                    rng.random_range(-inset * face.ea..inset * face.ea),
                    rng.random_range(-inset * face.eb..inset * face.eb),
                );
                let q = (
                    rng.random_range(-inset * face.ea..inset * face.ea),
                    rng.random_range(-inset * face.eb..inset * face.eb),
                );
                if ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt() >= min_len {
                    return (face.at(p.0, p.1), face.at(q.0, q.1));
                }
            }
        }
    }
}

/// Samples point and line landmarks on the box surfaces.
///
/// Points are uniform on each face, `round(density * area)` per face, and
/// their ids are assigned in a shuffled order so that id order carries no
/// spatial meaning. Lines are the 12 edges of each box plus `lines_per_face`
/// segments per face cycling through the two face axes and a free in-plane
/// direction. Axis-aligned lines are oriented towards the positive axis,
/// so every set of lines sharing an exact direction forms a parallel group.
pub fn build_scene(spec: &SceneSpec) -> Result<Scene, SimError> {
    spec.validate()?;
    let mut rng = super::scene_rng(spec.seed);

    let mut positions = Vec::new();
    let mut segments = Vec::new();
    for bx in &spec.boxes {
        if spec.edge_lines {
            segments.extend(box_edges(bx));
        }
        for face in Face::all(bx) {
            let count = (spec.points_per_m2 * face.area()).round() as usize;
            for _ in 0..count {
                let sa = rng.random_range(-face.ea..=face.ea);
                let sb = rng.random_range(-face.eb..=face.eb);
                positions.push(face.at(sa, sb));
            }
            for k in 0..spec.lines_per_face {
                segments.push(sample_face_line(&face, k % 3, &mut rng));
            }
        }
    }
    positions.shuffle(&mut rng);
    let points: Vec<PointLandmark> = positions
        .into_iter()
        .enumerate()
        .map(|(i, position)| PointLandmark { id: PointId(i as u32), position })
        .collect();

    let mut skipped_lines = 0;
    let mut lines: Vec<LineLandmark> = Vec::with_capacity(segments.len());
    for (start, end) in segments {
        let plucker = match crate::geometry::PluckerLine::from_endpoints(&start, &end) {
            Ok(p) => p,
            Err(_) => {
                skipped_lines += 1;
                continue;
            }
        };
        if plucker.distance_to_origin() < MIN_ORIGIN_DISTANCE {
            skipped_lines += 1;
            continue;
        }
        lines.push(LineLandmark { id: LineId(lines.len() as u32), start, end, group: None });
    }
    if points.is_empty() && lines.is_empty() {
        return Err(SimError::EmptyScene);
    }

    // exact-direction buckets; only axis-aligned lines can collide bit-for-bit
    let mut buckets: BTreeMap<[u64; 3], Vec<usize>> = BTreeMap::new();
    for (i, l) in lines.iter().enumerate() {
        let d = l.direction().normalize();
        buckets.entry([d.x.to_bits(), d.y.to_bits(), d.z.to_bits()]).or_default().push(i);
    }
    let mut grouped: Vec<Vec<usize>> = buckets.into_values().filter(|m| m.len() >= 2).collect();
    grouped.sort_by_key(|m| m[0]);
    let mut parallel_groups = Vec::with_capacity(grouped.len());
    for (g, members) in grouped.into_iter().enumerate() {
        let gid = GroupId(g as u32);
        for &i in &members {
            lines[i].group = Some(gid);
        }
        parallel_groups.push(ParallelGroup { id: gid, members: members.iter().map(|&i| lines[i].id).collect() });
    }

    Ok(Scene { boxes: spec.boxes.clone(), points, lines, parallel_groups, skipped_lines })
}
