use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Vector3;

use super::SimError;
use crate::geometry::Pose;

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// Straight path from `start` to `end` with a horizontal sinusoidal
    /// lateral offset; the camera looks at `target`.
    Wave { start: Vector3<f64>, end: Vector3<f64>, amplitude: f64, wavelength: f64, target: Vector3<f64> },
    /// Circle of `radius` around `center` at height `height`, facing `center`.
    Orbit { center: Vector3<f64>, radius: f64, height: f64 },
    /// Sequence of straight legs joined by in-place left turns of 90 degrees.
    /// The camera looks along the direction of travel.
    Corridor { start: Vector3<f64>, heading_deg: f64, legs: Vec<f64>, turn_rate_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub frame_count: usize,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidSpec(m.to_string()));
        if self.frame_count < 2 {
            return bad("trajectory needs at least 2 frames");
        }
        let finite = |v: &Vector3<f64>| v.iter().all(|x| x.is_finite());
        match &self.kind {
            TrajectoryKind::Wave { start, end, amplitude, wavelength, target } => {
                if !finite(start) || !finite(end) || !finite(target) || !amplitude.is_finite() {
                    return bad("wave parameters must be finite");
                }
                if !(*wavelength > 0.0) || !wavelength.is_finite() {
                    return bad("wave wavelength must be positive");
                }
                if (end - start).norm() == 0.0 {
                    return bad("wave start and end coincide");
                }
            }
            TrajectoryKind::Orbit { center, radius, height } => {
                if !finite(center) || !height.is_finite() || !(*radius > 0.0) || !radius.is_finite() {
                    return bad("orbit needs a positive radius and finite center");
                }
            }
            TrajectoryKind::Corridor { start, heading_deg, legs, turn_rate_deg } => {
                if !finite(start) || !heading_deg.is_finite() {
                    return bad("corridor start must be finite");
                }
                if legs.is_empty() || legs.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
                    return bad("corridor needs positive leg lengths");
                }
                if !(*turn_rate_deg > 0.0) || !turn_rate_deg.is_finite() {
                    return bad("corridor turn rate must be positive");
                }
                let turn_frames = corridor_turn_frames(*turn_rate_deg) * (legs.len() - 1);
                if self.frame_count < turn_frames + legs.len() + 1 {
                    return bad("too few frames for the corridor legs and turns");
                }
            }
        }
        Ok(())
    }
}

fn corridor_turn_frames(turn_rate_deg: f64) -> usize {
    (90.0 / turn_rate_deg).ceil() as usize
}

/// Camera poses `T_{c,w}` for every frame.
pub fn build_trajectory(spec: &TrajectorySpec) -> Result<Vec<Pose>, SimError> {
    spec.validate()?;
    let n = spec.frame_count;
    let up = Vector3::z();
    let look = |eye: Vector3<f64>, target: Vector3<f64>| {
        Pose::look_at(&eye, &target, &up).ok_or_else(|| SimError::InvalidSpec("degenerate look-at direction".into()))
    };
    match &spec.kind {
        TrajectoryKind::Wave { start, end, amplitude, wavelength, target } => {
            let path = end - start;
            let lateral = up.cross(&path).try_normalize(1e-12).unwrap_or_else(Vector3::x);
            (0..n)
                .map(|i| {
                    let s = i as f64 / (n - 1) as f64;
                    let offset = amplitude * (2.0 * PI * s * path.norm() / wavelength).sin();
                    look(start + path * s + lateral * offset, *target)
                })
                .collect()
        }
        TrajectoryKind::Orbit { center, radius, height } => (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                let eye = Vector3::new(center.x + radius * a.cos(), center.y + radius * a.sin(), *height);
                look(eye, *center)
            })
            .collect(),
        TrajectoryKind::Corridor { start, heading_deg, legs, turn_rate_deg } => {
            let turn_frames = corridor_turn_frames(*turn_rate_deg);
            let corners = legs.len() - 1;
            let steps_total = n - 1 - corners * turn_frames;
            let length: f64 = legs.iter().sum();
            let mut steps: Vec<usize> =
                legs.iter().map(|l| ((steps_total as f64 * l / length).round() as usize).max(1)).collect();
            // fix rounding on the longest leg
            let assigned: usize = steps.iter().sum();
            let longest = (0..legs.len()).max_by(|&a, &b| legs[a].total_cmp(&legs[b])).unwrap_or(0);
            steps[longest] = (steps[longest] + steps_total).saturating_sub(assigned).max(1);

            let mut yaw = heading_deg.to_radians();
            let mut position = *start;
            let heading = |yaw: f64| Vector3::new(yaw.cos(), yaw.sin(), 0.0);
            let mut poses = vec![look(position, position + heading(yaw))?];
            for (leg, (&len, &k)) in legs.iter().zip(&steps).enumerate() {
                let dir = heading(yaw);
                for s in 1..=k {
                    let p = position + dir * (len * s as f64 / k as f64);
                    poses.push(look(p, p + dir)?);
                }
                position += dir * len;
                if leg < corners {
                    let yaw0 = yaw;
                    for r in 1..=turn_frames {
                        yaw = yaw0 + FRAC_PI_2 * r as f64 / turn_frames as f64;
                        poses.push(look(position, position + heading(yaw))?);
                    }
                }
            }
            poses.truncate(n);
            Ok(poses)
        }
    }
}
