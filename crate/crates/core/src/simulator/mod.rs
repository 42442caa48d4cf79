//! Synthetic box scenes, camera trajectories, visibility rendering and the
//! pixel/depth noise model.
//!
//! Randomness comes from one ChaCha8 seed split into two independent streams:
//! stream 0 drives scene sampling, stream 1 drives measurement noise. Noise is
//! drawn frame by frame; inside a frame points are visited in ascending id
//! order (x, y, depth), then lines in ascending id order (start x, y, depth,
//! then end x, y, depth). Draws are consumed even for measurements that end
//! up dropped, so one measurement's fate never shifts another's noise.

mod config;
mod noise;
mod render;
mod scene;
mod trajectory;

pub use config::{ConfigError, SimulationConfig, preset, PRESET_NAMES};
pub use noise::{DEFAULT_DISPARITY_CONSTANT, NoiseParams, disparity_depth, perturb_depth, perturb_pixel};
pub use render::{OCCLUSION_EPS, RenderOptions, first_hit, render_frame};
pub use scene::{MIN_ORIGIN_DISTANCE, Scene, SceneBox, SceneSpec, build_scene};
pub use trajectory::{TrajectoryKind, TrajectorySpec, build_trajectory};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose};
use crate::sequence::{Endpoint, Frame, LineMeasurement, PointMeasurement, Sequence};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("scene has no landmarks")]
    EmptyScene,
    #[error("camera of frame {0} is inside a box")]
    CameraInsideBox(usize),
}

pub(crate) fn scene_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0);
    rng
}

pub(crate) fn noise_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationReport {
    pub dropped_points: usize,
    pub dropped_lines: usize,
    /// Frames that ended up with no measurement at all.
    pub empty_frames: Vec<usize>,
    pub skipped_scene_lines: usize,
}

impl GenerationReport {
    pub fn warnings(&self) -> Vec<String> {
        self.empty_frames.iter().map(|f| format!("frame {f} has no observations")).collect()
    }
}

fn noisy_frame(exact: &Frame, noise: &NoiseParams, k: &CameraIntrinsics, min_line_len: f64, rng: &mut ChaCha8Rng, report: &mut GenerationReport) -> Frame {
    let m = noise.disparity_constant;
    let mut points = Vec::with_capacity(exact.points.len());
    for p in &exact.points {
        let pixel = perturb_pixel(&p.pixel, noise.sigma_pixel, rng);
        let depth = perturb_depth(p.depth, noise.sigma_depth, m, rng);
        match depth {
            Some(depth) if k.contains(&pixel) => points.push(PointMeasurement { landmark: p.landmark, pixel, depth }),
            _ => report.dropped_points += 1,
        }
    }
    let mut lines = Vec::with_capacity(exact.lines.len());
    for l in &exact.lines {
        let mut endpoint = |e: &Endpoint| {
            let pixel = perturb_pixel(&e.pixel, noise.sigma_pixel, rng);
            let depth = perturb_depth(e.depth, noise.sigma_depth, m, rng);
            depth.filter(|_| k.contains(&pixel)).map(|depth| Endpoint { pixel, depth })
        };
        let start = endpoint(&l.start);
        let end = endpoint(&l.end);
        match (start, end) {
            (Some(start), Some(end)) if (end.pixel - start.pixel).norm() >= min_line_len => {
                lines.push(LineMeasurement { landmark: l.landmark, start, end })
            }
            _ => report.dropped_lines += 1,
        }
    }
    Frame { points, lines }
}

/// Renders every frame, applies the noise model and assembles the sequence
/// with its exact ground truth.
pub fn generate_sequence(
    scene: &Scene,
    trajectory: &[Pose],
    noise: &NoiseParams,
    k: &CameraIntrinsics,
    render: &RenderOptions,
    noise_seed: u64,
) -> Result<(Sequence, GenerationReport), SimError> {
    k.validate().map_err(|e| SimError::InvalidSpec(e.to_string()))?;
    noise.validate()?;
    if trajectory.len() < 2 {
        return Err(SimError::InvalidSpec("trajectory needs at least 2 frames".into()));
    }
    for (i, pose) in trajectory.iter().enumerate() {
        let c = pose.camera_center();
        if scene.boxes.iter().any(|b| b.contains(&c)) {
            return Err(SimError::CameraInsideBox(i));
        }
    }

    let exact: Vec<Frame> = trajectory.par_iter().map(|pose| render_frame(scene, pose, k, render)).collect();

    let mut report = GenerationReport { skipped_scene_lines: scene.skipped_lines, ..Default::default() };
    let frames: Vec<Frame> = if noise.enabled {
        let mut rng = noise_rng(noise_seed);
        exact.iter().map(|f| noisy_frame(f, noise, k, render.min_line_len, &mut rng, &mut report)).collect()
    } else {
        exact
    };
    report.empty_frames = frames.iter().enumerate().filter(|(_, f)| f.is_empty()).map(|(i, _)| i).collect();

    let seq = Sequence {
        intrinsics: *k,
        groundtruth: trajectory.to_vec(),
        frames,
        point_landmarks: scene.points.clone(),
        line_landmarks: scene.lines.clone(),
        parallel_groups: scene.parallel_groups.clone(),
    };
    Ok((seq, report))
}

impl SimulationConfig {
    /// Builds scene and trajectory and generates the sequence.
    pub fn generate(&self) -> Result<(Sequence, GenerationReport), SimError> {
        let scene = build_scene(&self.scene)?;
        let trajectory = build_trajectory(&self.trajectory)?;
        generate_sequence(&scene, &trajectory, &self.noise, &self.camera, &self.render, self.scene.seed)
    }
}
