//! Plain-text `key = value` simulation configs.
//!
//! One assignment per line, `#` starts a comment. `box` may repeat; every
//! other key may appear once. Vectors are whitespace-separated numbers.

use std::collections::HashSet;

use nalgebra::Vector3;
use thiserror::Error;

use super::noise::NoiseParams;
use super::render::RenderOptions;
use super::scene::{SceneBox, SceneSpec};
use super::trajectory::{TrajectoryKind, TrajectorySpec};
use crate::geometry::CameraIntrinsics;

pub const PRESET_NAMES: [&str; 4] = ["sphere", "box", "corridor", "corridor-lines"];

const PRESETS: [(&str, &str); 4] = [
    ("sphere", include_str!("../../presets/sphere.conf")),
    ("box", include_str!("../../presets/box.conf")),
    ("corridor", include_str!("../../presets/corridor.conf")),
    ("corridor-lines", include_str!("../../presets/corridor-lines.conf")),
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub scene: SceneSpec,
    pub trajectory: TrajectorySpec,
    pub noise: NoiseParams,
    pub camera: CameraIntrinsics,
    pub render: RenderOptions,
}

/// Parses one of the embedded presets.
pub fn preset(name: &str) -> Result<SimulationConfig, ConfigError> {
    let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    SimulationConfig::parse(text)
}

#[derive(Default)]
struct Raw {
    kind: Option<String>,
    frames: Option<usize>,
    seed: Option<u64>,
    camera: Option<CameraIntrinsics>,
    boxes: Vec<SceneBox>,
    points_per_m2: Option<f64>,
    lines_per_face: Option<usize>,
    edge_lines: Option<bool>,
    vectors: Vec<(String, Vector3<f64>)>,
    scalars: Vec<(String, f64)>,
    legs: Option<Vec<f64>>,
}

impl Raw {
    fn vector(&self, key: &'static str) -> Result<Vector3<f64>, ConfigError> {
        self.vectors.iter().find(|(k, _)| k == key).map(|(_, v)| *v).ok_or(ConfigError::Missing(key))
    }

    fn scalar(&self, key: &str) -> Option<f64> {
        self.scalars.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }

    fn required(&self, key: &'static str) -> Result<f64, ConfigError> {
        self.scalar(key).ok_or(ConfigError::Missing(key))
    }
}

fn numbers(value: &str) -> Result<Vec<f64>, String> {
    value
        .split_whitespace()
        .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| format!("`{t}` is not a finite number")))
        .collect()
}

fn fixed<const N: usize>(value: &str) -> Result<[f64; N], String> {
    let v = numbers(value)?;
    v.try_into().map_err(|v: Vec<f64>| format!("expected {N} numbers, found {}", v.len()))
}

fn flag(value: &str) -> Result<bool, String> {
    match value {
        "on" | "true" | "yes" => Ok(true),
        "off" | "false" | "no" => Ok(false),
        _ => Err(format!("`{value}` is not on/off")),
    }
}

const VECTOR_KEYS: [&str; 5] = ["wave.start", "wave.end", "wave.target", "orbit.center", "corridor.start"];
const SCALAR_KEYS: [&str; 15] = [
    "wave.amplitude",
    "wave.wavelength",
    "orbit.radius",
    "orbit.height",
    "corridor.heading_deg",
    "corridor.turn_rate_deg",
    "sigma_s",
    "sigma_d",
    "disparity_constant",
    "z_near",
    "z_far",
    "min_line_len",
    "line_margin",
    "max_points_per_frame",
    "noise",
];

impl SimulationConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = Raw::default();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| ConfigError::Line { line: line_no, message };
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "box" && !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            match key {
                "trajectory" => raw.kind = Some(value.to_string()),
                "frames" => raw.frames = Some(value.parse().map_err(|_| err(format!("bad frame count `{value}`")))?),
                "seed" => raw.seed = Some(value.parse().map_err(|_| err(format!("bad seed `{value}`")))?),
                "camera" => {
                    let [fx, fy, cx, cy, w, h] = fixed::<6>(value).map_err(err)?;
                    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 || w > u32::MAX as f64 || h > u32::MAX as f64 {
                        return Err(err("image size must be positive integers".into()));
                    }
                    let k = CameraIntrinsics::new(fx, fy, cx, cy, w as u32, h as u32).map_err(|e| err(e.to_string()))?;
                    raw.camera = Some(k);
                }
                "box" => {
                    let v = fixed::<6>(value).map_err(err)?;
                    raw.boxes.push(SceneBox::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5])));
                }
                "points_per_m2" => raw.points_per_m2 = Some(fixed::<1>(value).map_err(err)?[0]),
                "lines_per_face" => raw.lines_per_face = Some(value.parse().map_err(|_| err(format!("bad count `{value}`")))?),
                "edge_lines" => raw.edge_lines = Some(flag(value).map_err(err)?),
                "corridor.legs" => raw.legs = Some(numbers(value).map_err(err)?),
                "noise" => raw.scalars.push((key.into(), flag(value).map_err(err)? as u8 as f64)),
                k if VECTOR_KEYS.contains(&k) => {
                    let [x, y, z] = fixed::<3>(value).map_err(err)?;
                    raw.vectors.push((k.into(), Vector3::new(x, y, z)));
                }
                k if SCALAR_KEYS.contains(&k) => raw.scalars.push((k.into(), fixed::<1>(value).map_err(err)?[0])),
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        raw.build()
    }
}

impl Raw {
    fn build(self) -> Result<SimulationConfig, ConfigError> {
        let frame_count = self.frames.ok_or(ConfigError::Missing("frames"))?;
        let kind = match self.kind.as_deref().ok_or(ConfigError::Missing("trajectory"))? {
            "wave" => TrajectoryKind::Wave {
                start: self.vector("wave.start")?,
                end: self.vector("wave.end")?,
                amplitude: self.required("wave.amplitude")?,
                wavelength: self.required("wave.wavelength")?,
                target: self.vector("wave.target")?,
            },
            "orbit" => TrajectoryKind::Orbit {
                center: self.vector("orbit.center")?,
                radius: self.required("orbit.radius")?,
                height: self.required("orbit.height")?,
            },
            "corridor" => TrajectoryKind::Corridor {
                start: self.vector("corridor.start")?,
                heading_deg: self.scalar("corridor.heading_deg").unwrap_or(0.0),
                legs: self.legs.clone().ok_or(ConfigError::Missing("corridor.legs"))?,
                turn_rate_deg: self.required("corridor.turn_rate_deg")?,
            },
            other => return Err(ConfigError::Invalid(format!("unknown trajectory kind `{other}`"))),
        };
        let defaults = NoiseParams::default();
        let noise = NoiseParams {
            sigma_pixel: self.scalar("sigma_s").unwrap_or(defaults.sigma_pixel),
            sigma_depth: self.scalar("sigma_d").unwrap_or(defaults.sigma_depth),
            disparity_constant: self.scalar("disparity_constant").unwrap_or(defaults.disparity_constant),
            enabled: self.scalar("noise").is_none_or(|v| v != 0.0),
        };
        let render_defaults = RenderOptions::default();
        let max_points = match self.scalar("max_points_per_frame") {
            Some(v) if v < 0.0 || v.fract() != 0.0 => {
                return Err(ConfigError::Invalid("max_points_per_frame must be a non-negative integer".into()))
            }
            v => v.map(|v| v as usize),
        };
        let render = RenderOptions {
            z_near: self.scalar("z_near").unwrap_or(render_defaults.z_near),
            z_far: self.scalar("z_far").unwrap_or(render_defaults.z_far),
            min_line_len: self.scalar("min_line_len").unwrap_or(render_defaults.min_line_len),
            line_margin: self.scalar("line_margin").unwrap_or(render_defaults.line_margin),
            max_points_per_frame: max_points,
        };
        Ok(SimulationConfig {
            scene: SceneSpec {
                boxes: self.boxes,
                points_per_m2: self.points_per_m2.unwrap_or(0.0),
                lines_per_face: self.lines_per_face.unwrap_or(0),
                edge_lines: self.edge_lines.unwrap_or(true),
                seed: self.seed.unwrap_or(0),
            },
            trajectory: TrajectorySpec { kind, frame_count },
            noise,
            camera: self.camera.ok_or(ConfigError::Missing("camera"))?,
            render,
        })
    }
}
