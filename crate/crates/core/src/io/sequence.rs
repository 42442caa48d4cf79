use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector2;

use super::stats::{compute_stats, stats_csv};
use super::trajectory::{Trajectory, format_trajectory, parse_trajectory};
use super::{Fields, IoError, push_floats, read_text, records, write_atomic};
use crate::geometry::CameraIntrinsics;
use crate::sequence::{
    Endpoint, Frame, GroupId, LineId, LineLandmark, LineMeasurement, ParallelGroup, PointId, PointLandmark,
    PointMeasurement, Sequence, check_line_measurement, check_point_measurement,
};

const CALIB: &str = "calib.txt";
const GROUNDTRUTH: &str = "groundtruth.txt";
const LANDMARKS: &str = "landmarks.txt";
const GROUPS: &str = "parallel_groups.txt";
const STATS: &str = "stats.csv";
const FRAMES: &str = "frames";

fn frame_file(i: usize) -> String {
    format!("{FRAMES}/{i:06}.txt")
}

/// Text contents of every file of a sequence directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceFiles {
    pub calib: String,
    pub groundtruth: String,
    pub landmarks: String,
    pub parallel_groups: String,
    pub frames: Vec<String>,
}

pub fn format_sequence(seq: &Sequence) -> SequenceFiles {
    let k = &seq.intrinsics;
    let mut fields = String::new();
    push_floats(&mut fields, &[k.fx, k.fy, k.cx, k.cy]);
    let calib = format!("{} {} {}\n", fields.trim_start(), k.width, k.height);

    let mut landmarks = String::new();
    for l in &seq.point_landmarks {
        landmarks.push_str(&format!("MP {}", l.id.0));
        push_floats(&mut landmarks, l.position.as_slice());
        landmarks.push('\n');
    }
    for l in &seq.line_landmarks {
        landmarks.push_str(&format!("ML {}", l.id.0));
        push_floats(&mut landmarks, l.start.as_slice());
        push_floats(&mut landmarks, l.end.as_slice());
        landmarks.push('\n');
    }

    let mut parallel_groups = String::new();
    for g in &seq.parallel_groups {
        parallel_groups.push_str(&format!("PG {}", g.id.0));
        for m in &g.members {
            let _ = write!(parallel_groups, " {}", m.0);
        }
        parallel_groups.push('\n');
    }

    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let mut out = String::new();
            for m in &f.points {
                out.push_str(&format!("P {}", m.landmark.0));
                push_floats(&mut out, &[m.pixel.x, m.pixel.y, m.depth]);
                out.push('\n');
            }
            for m in &f.lines {
                out.push_str(&format!("L {}", m.landmark.0));
                push_floats(&mut out, &[m.start.pixel.x, m.start.pixel.y, m.start.depth, m.end.pixel.x, m.end.pixel.y, m.end.depth]);
                out.push('\n');
            }
            out
        })
        .collect();

    SequenceFiles {
        calib,
        groundtruth: format_trajectory(&Trajectory::from_poses(seq.groundtruth.clone())),
        landmarks,
        parallel_groups,
        frames,
    }
}

fn parse_calib(text: &str) -> Result<CameraIntrinsics, IoError> {
    let mut recs = records(text);
    let (line, content) = recs.next().ok_or_else(|| IoError::Parse { file: CALIB.into(), line: 1, message: "empty calibration".into() })?;
    let mut f = Fields::new(content, CALIB, line);
    let (fx, fy, cx, cy) = (f.float("fx")?, f.float("fy")?, f.float("cx")?, f.float("cy")?);
    let (w, h): (u32, u32) = (f.parse("width")?, f.parse("height")?);
    let k = CameraIntrinsics::new(fx, fy, cx, cy, w, h).map_err(|e| f.error(e.to_string()))?;
    f.finish()?;
    if let Some((line, _)) = recs.next() {
        return Err(IoError::Parse { file: CALIB.into(), line, message: "unexpected extra record".into() });
    }
    Ok(k)
}

fn parse_landmarks(text: &str) -> Result<(Vec<PointLandmark>, Vec<LineLandmark>), IoError> {
    let (mut points, mut lines) = (Vec::new(), Vec::new());
    let (mut point_ids, mut line_ids) = (HashSet::new(), HashSet::new());
    for (line, content) in records(text) {
        let mut f = Fields::new(content, LANDMARKS, line);
        match f.next_token("record tag")? {
            "MP" => {
                let id = PointId(f.parse("point id")?);
                let position = f.vec3("position")?;
                f.finish()?;
                if !point_ids.insert(id) {
                    return Err(IoError::Parse { file: LANDMARKS.into(), line, message: format!("duplicate point {id}") });
                }
                points.push(PointLandmark { id, position });
            }
            "ML" => {
                let id = LineId(f.parse("line id")?);
                let (start, end) = (f.vec3("start")?, f.vec3("end")?);
                if start == end {
                    return Err(f.error("coincident line endpoints"));
                }
                f.finish()?;
                if !line_ids.insert(id) {
                    return Err(IoError::Parse { file: LANDMARKS.into(), line, message: format!("duplicate line {id}") });
                }
                lines.push(LineLandmark { id, start, end, group: None });
            }
            tag => return Err(f.error(format!("unknown record tag `{tag}`"))),
        }
    }
    Ok((points, lines))
}

fn parse_groups(text: &str, lines: &mut [LineLandmark]) -> Result<Vec<ParallelGroup>, IoError> {
    let slot: BTreeMap<LineId, usize> = lines.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let mut groups = Vec::new();
    for (line, content) in records(text) {
        let mut f = Fields::new(content, GROUPS, line);
        match f.next_token("record tag")? {
            "PG" => {}
            tag => return Err(f.error(format!("unknown record tag `{tag}`"))),
        }
        let id = GroupId(f.parse("group id")?);
        let mut members = Vec::new();
        while !f.is_done() {
            let member = LineId(f.parse("line id")?);
            let &i = slot.get(&member).ok_or_else(|| f.error(format!("dangling line id {member}")))?;
            if lines[i].group.is_some() {
                return Err(f.error(format!("line {member} belongs to more than one group")));
            }
            lines[i].group = Some(id);
            members.push(member);
        }
        groups.push(ParallelGroup { id, members });
    }
    Ok(groups)
}

fn parse_frame(
    text: &str,
    file: &str,
    k: &CameraIntrinsics,
    point_ids: &HashSet<PointId>,
    line_ids: &HashSet<LineId>,
) -> Result<Frame, IoError> {
    let mut frame = Frame::default();
    for (line, content) in records(text) {
        let mut f = Fields::new(content, file, line);
        match f.next_token("record tag")? {
            "P" => {
                let landmark = PointId(f.parse("point id")?);
                let pixel = Vector2::new(f.float("u")?, f.float("v")?);
                let depth = f.float("depth")?;
                f.finish()?;
                let m = PointMeasurement { landmark, pixel, depth };
                check_point_measurement(&m, k).map_err(|e| IoError::Parse { file: file.into(), line, message: e.0 })?;
                if !point_ids.contains(&landmark) {
                    return Err(IoError::Parse { file: file.into(), line, message: format!("dangling landmark id {landmark}") });
                }
                frame.points.push(m);
            }
            "L" => {
                let landmark = LineId(f.parse("line id")?);
                let endpoint = |f: &mut Fields| -> Result<Endpoint, IoError> {
                    let pixel = Vector2::new(f.float("u")?, f.float("v")?);
                    Ok(Endpoint { pixel, depth: f.float("depth")? })
                };
                let (start, end) = (endpoint(&mut f)?, endpoint(&mut f)?);
                f.finish()?;
                let m = LineMeasurement { landmark, start, end };
                check_line_measurement(&m, k).map_err(|e| IoError::Parse { file: file.into(), line, message: e.0 })?;
                if !line_ids.contains(&landmark) {
                    return Err(IoError::Parse { file: file.into(), line, message: format!("dangling landmark id {landmark}") });
                }
                frame.lines.push(m);
            }
            tag => return Err(f.error(format!("unknown record tag `{tag}`"))),
        }
    }
    Ok(frame)
}

/// Parses and validates the contents of a sequence directory.
pub fn parse_sequence(files: &SequenceFiles) -> Result<Sequence, IoError> {
    let intrinsics = parse_calib(&files.calib)?;
    let gt = parse_trajectory(&files.groundtruth, GROUNDTRUTH)?;
    if gt.frame_ids.iter().enumerate().any(|(i, &id)| i != id) {
        return Err(IoError::Invalid { file: GROUNDTRUTH.into(), message: "frame ids must be 0, 1, 2, ...".into() });
    }
    if gt.len() != files.frames.len() {
        return Err(IoError::Invalid {
            file: GROUNDTRUTH.into(),
            message: format!("{} poses but {} frame files", gt.len(), files.frames.len()),
        });
    }
    let (point_landmarks, mut line_landmarks) = parse_landmarks(&files.landmarks)?;
    let parallel_groups = parse_groups(&files.parallel_groups, &mut line_landmarks)?;
    let point_ids: HashSet<PointId> = point_landmarks.iter().map(|l| l.id).collect();
    let line_ids: HashSet<LineId> = line_landmarks.iter().map(|l| l.id).collect();
    let frames = files
        .frames
        .iter()
        .enumerate()
        .map(|(i, text)| parse_frame(text, &frame_file(i), &intrinsics, &point_ids, &line_ids))
        .collect::<Result<Vec<_>, _>>()?;
    let seq = Sequence { intrinsics, groundtruth: gt.poses, frames, point_landmarks, line_landmarks, parallel_groups };
    seq.validate().map_err(|e| IoError::Invalid { file: "sequence".into(), message: e.0 })?;
    Ok(seq)
}

/// Writes the directory layout `calib.txt`, `groundtruth.txt`,
/// `landmarks.txt`, `parallel_groups.txt`, `frames/NNNNNN.txt` and
/// `stats.csv`. Stale frame files from an earlier, longer write are removed.
pub fn write_sequence(seq: &Sequence, dir: &Path) -> Result<(), IoError> {
    seq.validate().map_err(|e| IoError::Invalid { file: "sequence".into(), message: e.0 })?;
    let files = format_sequence(seq);
    let frames_dir = dir.join(FRAMES);
    std::fs::create_dir_all(&frames_dir).map_err(|e| IoError::io(&frames_dir, e))?;
    for entry in std::fs::read_dir(&frames_dir).map_err(|e| IoError::io(&frames_dir, e))? {
        let path = entry.map_err(|e| IoError::io(&frames_dir, e))?.path();
        let stale = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".txt"))
            .and_then(|n| n.parse::<usize>().ok())
            .is_some_and(|i| i >= files.frames.len());
        if stale {
            std::fs::remove_file(&path).map_err(|e| IoError::io(&path, e))?;
        }
    }
    write_atomic(&dir.join(CALIB), files.calib.as_bytes())?;
    write_atomic(&dir.join(GROUNDTRUTH), files.groundtruth.as_bytes())?;
    write_atomic(&dir.join(LANDMARKS), files.landmarks.as_bytes())?;
    write_atomic(&dir.join(GROUPS), files.parallel_groups.as_bytes())?;
    for (i, text) in files.frames.iter().enumerate() {
        write_atomic(&dir.join(frame_file(i)), text.as_bytes())?;
    }
    write_atomic(&dir.join(STATS), stats_csv(&compute_stats(seq)).as_bytes())
}

pub fn read_sequence(dir: &Path) -> Result<Sequence, IoError> {
    let groundtruth = read_text(&dir.join(GROUNDTRUTH))?;
    let count = records(&groundtruth).count();
    let frames = (0..count).map(|i| read_text(&dir.join(frame_file(i)))).collect::<Result<Vec<_>, _>>()?;
    let files = SequenceFiles {
        calib: read_text(&dir.join(CALIB))?,
        groundtruth,
        landmarks: read_text(&dir.join(LANDMARKS))?,
        parallel_groups: read_text(&dir.join(GROUPS))?,
        frames,
    };
    parse_sequence(&files)
}
