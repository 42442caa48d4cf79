//! Plain-text serialization of sequences, trajectories, factor graphs and
//! per-frame statistics.
//!
//! Every format is one whitespace-separated record per line with `#`
//! comments. Floats are written in shortest round-trip form, so reading a
//! written file reproduces every value bit for bit. Poses are stored as
//! `T_{c,w}`, the same convention used in memory. Parsers work on `&str` and
//! return structured errors for any malformed input.

mod graph;
mod sequence;
mod stats;
mod trajectory;

pub use graph::{format_graph, parse_graph, read_graph, write_graph};
pub use sequence::{SequenceFiles, format_sequence, parse_sequence, read_sequence, write_sequence};
pub use stats::{FrameStats, STATS_HEADER, compute_frame_stats, compute_stats, stats_csv};
pub use trajectory::{Trajectory, format_trajectory, parse_trajectory, read_trajectory, write_trajectory};

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::{FromStr, SplitWhitespace};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::geometry::Pose;

/// Largest accepted deviation of a stored quaternion from unit norm.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}:{line}: {message}")]
    Parse { file: String, line: usize, message: String },
    #[error("{file}: {message}")]
    Invalid { file: String, message: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `contents` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Content lines of a text file with their 1-based numbers; comments and
/// blank lines are skipped.
pub(crate) fn records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let content = line.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then_some((i + 1, content))
    })
}

/// Cursor over the fields of one record.
pub(crate) struct Fields<'a> {
    tokens: SplitWhitespace<'a>,
    file: &'a str,
    line: usize,
}

impl<'a> Fields<'a> {
    pub(crate) fn new(content: &'a str, file: &'a str, line: usize) -> Self {
        Self { tokens: content.split_whitespace(), file, line }
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> IoError {
        IoError::Parse { file: self.file.to_string(), line: self.line, message: message.into() }
    }

    pub(crate) fn next_token(&mut self, what: &str) -> Result<&'a str, IoError> {
        self.tokens.next().ok_or_else(|| self.error(format!("missing {what}")))
    }

    pub(crate) fn parse<T: FromStr>(&mut self, what: &str) -> Result<T, IoError> {
        let token = self.next_token(what)?;
        token.parse().map_err(|_| self.error(format!("bad {what} `{token}`")))
    }

    pub(crate) fn float(&mut self, what: &str) -> Result<f64, IoError> {
        let v: f64 = self.parse(what)?;
        if v.is_finite() { Ok(v) } else { Err(self.error(format!("non-finite {what}"))) }
    }

    pub(crate) fn vec3(&mut self, what: &str) -> Result<Vector3<f64>, IoError> {
        Ok(Vector3::new(self.float(what)?, self.float(what)?, self.float(what)?))
    }

    /// `tx ty tz qx qy qz qw`.
    pub(crate) fn pose(&mut self) -> Result<Pose, IoError> {
        let t = self.vec3("translation")?;
        let (qx, qy, qz, qw) = (self.float("quaternion")?, self.float("quaternion")?, self.float("quaternion")?, self.float("quaternion")?);
        let q = Quaternion::new(qw, qx, qy, qz);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(self.error(format!("non-unit quaternion (norm {norm})")));
        }
        // keep exactly-unit input bit for bit, renormalize anything else
        let unit = if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Ok(Pose::new(unit, t))
    }

    pub(crate) fn is_done(&mut self) -> bool {
        self.tokens.clone().next().is_none()
    }

    pub(crate) fn finish(mut self) -> Result<(), IoError> {
        match self.tokens.next() {
            None => Ok(()),
            Some(t) => Err(self.error(format!("unexpected trailing field `{t}`"))),
        }
    }
}

pub(crate) fn push_floats(out: &mut String, values: &[f64]) {
    for v in values {
        let _ = write!(out, " {v}");
    }
}

pub(crate) fn push_pose(out: &mut String, pose: &Pose) {
    let t = pose.translation();
    let q = pose.quaternion().coords; // (x, y, z, w)
    push_floats(out, &[t.x, t.y, t.z, q[0], q[1], q[2], q[3]]);
}
