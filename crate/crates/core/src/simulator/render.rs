use nalgebra::{Vector2, Vector3};

use super::scene::{Scene, SceneBox};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::sequence::{Endpoint, Frame, LineMeasurement, MIN_LINE_LEN, PointMeasurement};

/// Slack on the first-hit test: a landmark counts as occluded only if some
/// box is entered strictly before it by more than this distance (m).
pub const OCCLUSION_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub z_near: f64,
    pub z_far: f64,
    pub min_line_len: f64,
    /// Inset (px) of the rectangle that lines are clipped to. Clip points
    /// sit on this inner border, so a few pixels keep noisy endpoints from
    /// routinely leaving the image.
    pub line_margin: f64,
    /// Cap on point measurements per frame. Points are kept by a fixed
    /// per-landmark priority, so neighbouring frames keep the same ones.
    pub max_points_per_frame: Option<usize>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { z_near: 0.1, z_far: 20.0, min_line_len: MIN_LINE_LEN, line_margin: 5.0, max_points_per_frame: None }
    }
}

/// Distance along the ray from `origin` towards `target` at which the first
/// box is entered, if any box is entered before reaching the target.
pub fn first_hit(boxes: &[SceneBox], origin: &Vector3<f64>, target: &Vector3<f64>) -> Option<f64> {
    let dir = (target - origin).normalize();
    boxes.iter().filter_map(|b| b.ray_entry(origin, &dir)).fold(None, |acc: Option<f64>, t| {
        Some(acc.map_or(t, |a| a.min(t)))
    })
}

fn occluded(boxes: &[SceneBox], center: &Vector3<f64>, p: &Vector3<f64>) -> bool {
    let dist = (p - center).norm();
    first_hit(boxes, center, p).is_some_and(|t| t < dist - OCCLUSION_EPS)
}

struct Visibility<'a> {
    scene: &'a Scene,
    pose: &'a Pose,
    k: &'a CameraIntrinsics,
    opts: &'a RenderOptions,
    center: Vector3<f64>,
}

impl Visibility<'_> {
    /// Exact observation of a world point, if it passes the depth band,
    /// image and occlusion tests.
    fn observe(&self, p_world: &Vector3<f64>) -> Option<(Vector2<f64>, f64)> {
        let pc = self.pose.transform_point(p_world);
        if !(pc.z >= self.opts.z_near && pc.z <= self.opts.z_far) {
            return None;
        }
        let u = self.k.project_unchecked(&pc);
        if !self.k.contains(&u) || occluded(&self.scene.boxes, &self.center, p_world) {
            return None;
        }
        Some((u, pc.z))
    }

    fn line(&self, start: &Vector3<f64>, end: &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let (a, b) = (self.pose.transform_point(start), self.pose.transform_point(end));
        // clip to z >= z_near; parameters are shared by world and camera segments
        let near = self.opts.z_near;
        let (mut s0, mut s1) = (0.0, 1.0);
        if a.z < near && b.z < near {
            return None;
        }
        if a.z < near {
            s0 = (near - a.z) / (b.z - a.z);
        } else if b.z < near {
            s1 = (near - a.z) / (b.z - a.z);
        }
        let at = |s: f64| a + (b - a) * s;
        let (ca, cb) = (at(s0), at(s1));
        let (pa, pb) = (self.k.project_unchecked(&ca), self.k.project_unchecked(&cb));
        let m = self.opts.line_margin.max(1e-6);
        let (t0, t1) = clip_to_rect(&pa, &pb, m, m, self.k.width as f64 - m, self.k.height as f64 - m)?;
        // image fraction -> segment fraction under perspective
        let to_seg = |tau: f64| tau * ca.z / ((1.0 - tau) * cb.z + tau * ca.z);
        let (r0, r1) = (s0 + (s1 - s0) * to_seg(t0), s0 + (s1 - s0) * to_seg(t1));
        Some((start + (end - start) * r0, start + (end - start) * r1))
    }
}

/// Liang-Barsky clip of the segment `p0 -> p1` against a rectangle; returns
/// the surviving parameter interval.
fn clip_to_rect(p0: &Vector2<f64>, p1: &Vector2<f64>, xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Option<(f64, f64)> {
    let d = p1 - p0;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p, q) in [(-d.x, p0.x - xmin), (d.x, xmax - p0.x), (-d.y, p0.y - ymin), (d.y, ymax - p0.y)] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                t0 = t0.max(r);
            } else {
                t1 = t1.min(r);
            }
        }
    }
    (t0 < t1).then_some((t0, t1))
}

fn point_priority(id: u32) -> u64 {
    // splitmix64 finalizer
    let mut z = (id as u64).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Exact (noise-free) observations of every visible landmark from `pose`.
///
/// A point is visible iff its depth lies in `[z_near, z_far]`, it projects
/// inside the image, and no box is hit strictly before it along the viewing
/// ray. Lines are clipped to the near plane and the image rectangle; both
/// clipped endpoints must pass the point test and the clipped segment must
/// be at least `min_line_len` pixels long.
pub fn render_frame(scene: &Scene, pose: &Pose, k: &CameraIntrinsics, opts: &RenderOptions) -> Frame {
    let vis = Visibility { scene, pose, k, opts, center: pose.camera_center() };
    let mut points: Vec<PointMeasurement> = scene
        .points
        .iter()
        .filter_map(|l| vis.observe(&l.position).map(|(pixel, depth)| PointMeasurement { landmark: l.id, pixel, depth }))
        .collect();
    if let Some(max) = opts.max_points_per_frame.filter(|&m| m < points.len()) {
        // a fixed pseudo-random priority per landmark keeps the selection
        // spatially spread and stable between neighbouring frames
        points.sort_by_key(|m| point_priority(m.landmark.0));
        points.truncate(max);
        points.sort_by_key(|m| m.landmark);
    }
    let lines = scene
        .lines
        .iter()
        .filter_map(|l| {
            let (s, e) = vis.line(&l.start, &l.end)?;
            let (ps, ds) = vis.observe(&s)?;
            let (pe, de) = vis.observe(&e)?;
            let m = LineMeasurement {
                landmark: l.id,
                start: Endpoint { pixel: ps, depth: ds },
                end: Endpoint { pixel: pe, depth: de },
            };
            (m.pixel_length() >= opts.min_line_len).then_some(m)
        })
        .collect();
    Frame { points, lines }
}
