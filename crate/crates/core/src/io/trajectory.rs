use std::path::Path;

use super::{Fields, IoError, push_pose, read_text, records, write_atomic};
use crate::geometry::Pose;

/// Poses `T_{c,w}` tagged with strictly increasing frame ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub frame_ids: Vec<usize>,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    /// Frame ids `0..n`.
    pub fn from_poses(poses: Vec<Pose>) -> Self {
        Self { frame_ids: (0..poses.len()).collect(), poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// One line per frame: `frame_id tx ty tz qx qy qz qw`.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (id, pose) in traj.frame_ids.iter().zip(&traj.poses) {
        out.push_str(&id.to_string());
        push_pose(&mut out, pose);
        out.push('\n');
    }
    out
}

pub fn parse_trajectory(text: &str, file: &str) -> Result<Trajectory, IoError> {
    let mut traj = Trajectory::default();
    for (line, content) in records(text) {
        let mut f = Fields::new(content, file, line);
        let id: usize = f.parse("frame_id")?;
        if traj.frame_ids.last().is_some_and(|&prev| prev >= id) {
            return Err(f.error("non-monotonic frame_id"));
        }
        let pose = f.pose()?;
        f.finish()?;
        traj.frame_ids.push(id);
        traj.poses.push(pose);
    }
    Ok(traj)
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    write_atomic(path, format_trajectory(traj).as_bytes())
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    parse_trajectory(&read_text(path)?, &path.display().to_string())
}
