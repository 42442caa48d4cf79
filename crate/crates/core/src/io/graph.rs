use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use super::{Fields, IoError, push_floats, push_pose, read_text, records, write_atomic};
use crate::factor_graph::{FactorGraph, LineFactor, LineVertex, PLUCKER_TOLERANCE, PointFactor, PointVertex, PoseVertex};
use crate::geometry::{CameraIntrinsics, PluckerLine};
use crate::sequence::{LineId, PointId};

/// Records, in write order:
///
/// ```text
/// CAMERA fx fy cx cy width height
/// VERTEX_POSE id tx ty tz qx qy qz qw
/// VERTEX_POINT id X Y Z
/// VERTEX_LINE id nx ny nz dx dy dz
/// EDGE_POINT frame point px py [weight]
/// EDGE_LINE frame line sx sy ex ey [weight]
/// FIX id
/// ```
///
/// The weight is written only when it differs from 1.
pub fn format_graph(graph: &FactorGraph) -> String {
    let mut out = String::new();
    if let Some(k) = &graph.camera {
        out.push_str("CAMERA");
        push_floats(&mut out, &[k.fx, k.fy, k.cx, k.cy]);
        let _ = writeln!(out, " {} {}", k.width, k.height);
    }
    for v in &graph.poses {
        let _ = write!(out, "VERTEX_POSE {}", v.id);
        push_pose(&mut out, &v.pose);
        out.push('\n');
    }
    for v in &graph.points {
        let _ = write!(out, "VERTEX_POINT {}", v.id.0);
        push_floats(&mut out, v.position.as_slice());
        out.push('\n');
    }
    for v in &graph.lines {
        let _ = write!(out, "VERTEX_LINE {}", v.id.0);
        push_floats(&mut out, v.plucker().moment.as_slice());
        push_floats(&mut out, v.plucker().direction.as_slice());
        out.push('\n');
    }
    let weight = |out: &mut String, w: f64| {
        if w != 1.0 {
            push_floats(out, &[w]);
        }
        out.push('\n');
    };
    for f in &graph.point_factors {
        let _ = write!(out, "EDGE_POINT {} {}", graph.poses[f.pose].id, graph.points[f.point].id.0);
        push_floats(&mut out, f.measurement.as_slice());
        weight(&mut out, f.weight);
    }
    for f in &graph.line_factors {
        let _ = write!(out, "EDGE_LINE {} {}", graph.poses[f.pose].id, graph.lines[f.line].id.0);
        push_floats(&mut out, &[f.start.x, f.start.y, f.end.x, f.end.y]);
        weight(&mut out, f.weight);
    }
    for v in graph.poses.iter().filter(|v| v.fixed) {
        let _ = writeln!(out, "FIX {}", v.id);
    }
    out
}

fn optional_weight(f: &mut Fields) -> Result<f64, IoError> {
    if f.is_done() {
        return Ok(1.0);
    }
    let w = f.float("weight")?;
    if w > 0.0 { Ok(w) } else { Err(f.error("weight must be positive")) }
}

/// Parses a graph file. Edges and `FIX` records may reference vertices
/// declared anywhere in the file.
pub fn parse_graph(text: &str, file: &str) -> Result<FactorGraph, IoError> {
    let mut graph = FactorGraph::default();
    let (mut pose_slot, mut point_slot, mut line_slot) = (HashMap::new(), HashMap::new(), HashMap::new());
    // unresolved references with their line numbers
    let mut point_edges: Vec<(usize, usize, u32, Vector2<f64>, f64)> = Vec::new();
    let mut line_edges: Vec<(usize, usize, u32, Vector2<f64>, Vector2<f64>, f64)> = Vec::new();
    let mut fixes: Vec<(usize, usize)> = Vec::new();

    for (line, content) in records(text) {
        let mut f = Fields::new(content, file, line);
        match f.next_token("record tag")? {
            "CAMERA" => {
                if graph.camera.is_some() {
                    return Err(f.error("duplicate CAMERA record"));
                }
                let (fx, fy, cx, cy) = (f.float("fx")?, f.float("fy")?, f.float("cx")?, f.float("cy")?);
                let (w, h): (u32, u32) = (f.parse("width")?, f.parse("height")?);
                graph.camera = Some(CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(|e| f.error(e.to_string()))?);
            }
            "VERTEX_POSE" => {
                let id: usize = f.parse("pose id")?;
                let pose = f.pose()?;
                if pose_slot.insert(id, graph.poses.len()).is_some() {
                    return Err(f.error(format!("duplicate pose vertex {id}")));
                }
                graph.poses.push(PoseVertex { id, pose, fixed: false });
            }
            "VERTEX_POINT" => {
                let id = PointId(f.parse("point id")?);
                let position = f.vec3("position")?;
                if point_slot.insert(id, graph.points.len()).is_some() {
                    return Err(f.error(format!("duplicate point vertex {}", id.0)));
                }
                graph.points.push(PointVertex { id, position });
            }
            "VERTEX_LINE" => {
                let id = LineId(f.parse("line id")?);
                let line_coords = PluckerLine::new(f.vec3("moment")?, f.vec3("direction")?);
                if !(line_coords.direction.norm() > 0.0) {
                    return Err(f.error("zero line direction"));
                }
                if !line_coords.satisfies_constraint(PLUCKER_TOLERANCE) {
                    return Err(f.error("Plücker constraint violated"));
                }
                let vertex = LineVertex::new(id, line_coords).map_err(|e| f.error(e.to_string()))?;
                if line_slot.insert(id, graph.lines.len()).is_some() {
                    return Err(f.error(format!("duplicate line vertex {}", id.0)));
                }
                graph.lines.push(vertex);
            }
            "EDGE_POINT" => {
                let (pose, point): (usize, u32) = (f.parse("pose id")?, f.parse("point id")?);
                let u = Vector2::new(f.float("px")?, f.float("py")?);
                point_edges.push((line, pose, point, u, optional_weight(&mut f)?));
            }
            "EDGE_LINE" => {
                let (pose, id): (usize, u32) = (f.parse("pose id")?, f.parse("line id")?);
                let s = Vector2::new(f.float("sx")?, f.float("sy")?);
                let e = Vector2::new(f.float("ex")?, f.float("ey")?);
                line_edges.push((line, pose, id, s, e, optional_weight(&mut f)?));
            }
            "FIX" => fixes.push((line, f.parse("pose id")?)),
            tag => return Err(f.error(format!("unknown record tag `{tag}`"))),
        }
        f.finish()?;
    }

    let dangling = |line: usize, what: String| IoError::Parse { file: file.into(), line, message: format!("dangling reference to {what}") };
    for (line, pose, point, measurement, weight) in point_edges {
        let &pose = pose_slot.get(&pose).ok_or_else(|| dangling(line, format!("pose {pose}")))?;
        let &point = point_slot.get(&PointId(point)).ok_or_else(|| dangling(line, format!("point {point}")))?;
        graph.point_factors.push(PointFactor { pose, point, measurement, weight });
    }
    for (line, pose, id, start, end, weight) in line_edges {
        let &pose = pose_slot.get(&pose).ok_or_else(|| dangling(line, format!("pose {pose}")))?;
        let &l = line_slot.get(&LineId(id)).ok_or_else(|| dangling(line, format!("line {id}")))?;
        graph.line_factors.push(LineFactor { pose, line: l, start, end, weight });
    }
    for (line, id) in fixes {
        let &slot = pose_slot.get(&id).ok_or_else(|| dangling(line, format!("pose {id}")))?;
        graph.poses[slot].fixed = true;
    }
    graph.validate().map_err(|e| IoError::Invalid { file: file.into(), message: e.to_string() })?;
    Ok(graph)
}

pub fn write_graph(graph: &FactorGraph, path: &Path) -> Result<(), IoError> {
    write_atomic(path, format_graph(graph).as_bytes())
}

pub fn read_graph(path: &Path) -> Result<FactorGraph, IoError> {
    parse_graph(&read_text(path)?, &path.display().to_string())
}
