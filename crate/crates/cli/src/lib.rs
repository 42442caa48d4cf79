//! Batch driver for the plbench pipeline.
//!
//! `generate` writes a sequence directory, `stats` emits per-frame feature
//! statistics, `track` runs the tracking baseline and writes a trajectory
//! plus a factor graph, `optimize` refines a graph with bundle adjustment and
//! `evaluate` scores an estimated trajectory against ground truth.
//!
//! Exit status is 0 on success, 1 on a domain failure (unreadable input,
//! lost tracking, solver abort) and 2 on a usage error. Diagnostics go to the
//! error stream; data goes to files or standard output. Every output file is
//! written atomically.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use plbench::evaluation::{ErrorSeries, MetricSummary, ate, rpe};
use plbench::factor_graph::build_covisibility_graph;
use plbench::io::{
    Trajectory, compute_stats, format_graph, read_graph, read_sequence, read_trajectory, stats_csv, write_atomic,
    write_sequence, write_trajectory,
};
use plbench::optimizer::{BaMethod, SolverConfig, cost_trace_csv, optimize};
use plbench::simulator::{SimulationConfig, preset};
use plbench::tracking::{TrackingConfig, TrackingMode, build_map, track};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// File written next to the optimized graph unless `--trace` is given.
pub const COST_TRACE_FILE: &str = "cost_trace.csv";

#[derive(Debug, Parser)]
#[command(name = "plbench", version, about = "Synthetic point/line SLAM benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a measurement sequence and write it to a directory.
    Generate(GenerateArgs),
    /// Per-frame feature counts and occupied 10x10 px cells as CSV.
    Stats(StatsArgs),
    /// Track a sequence and write the trajectory and its factor graph.
    Track(TrackArgs),
    /// Refine a factor graph with bundle adjustment.
    Optimize(OptimizeArgs),
    /// Score an estimated trajectory against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Ftf,
    Mtf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Point,
    Pointline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Ate,
    Rpe,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Built-in scene and trajectory.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(plbench::simulator::PRESET_NAMES), default_value = "box", conflicts_with = "config")]
    pub preset: String,
    /// `key = value` config file used instead of a preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    pub frames: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<Switch>,
    /// Pixel noise standard deviation (px).
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_s: Option<f64>,
    /// Depth noise standard deviation (m).
    #[arg(long, allow_negative_numbers = true)]
    pub sigma_d: Option<f64>,
    /// Output sequence directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub seq: PathBuf,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long, value_enum, default_value = "mtf")]
    pub mode: Mode,
    /// Estimated trajectory.
    #[arg(long)]
    pub out: PathBuf,
    /// Co-visibility factor graph built from the estimate.
    #[arg(long)]
    pub graph: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Input factor graph.
    #[arg(long)]
    pub graph: PathBuf,
    #[arg(long, value_enum, default_value = "pointline")]
    pub method: Method,
    #[arg(long, default_value_t = 15, value_parser = clap::value_parser!(u64).range(1..))]
    pub iters: u64,
    /// Optimized graph.
    #[arg(long)]
    pub out: PathBuf,
    /// Optimized trajectory.
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Per-iteration cost CSV; defaults to `cost_trace.csv` beside `--out`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, value_enum, default_value = "ate")]
    pub metric: Metric,
    /// Frame gap for RPE.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub delta: u64,
    /// Per-frame error CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Domain(_) => EXIT_DOMAIN,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

/// Parses `argv` (program name first) and runs the command.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { err.write_all(text.as_bytes()) } else { out.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => generate(a, err),
        Command::Stats(a) => stats(a, out),
        Command::Track(a) => track_cmd(a, err),
        Command::Optimize(a) => optimize_cmd(a, err),
        Command::Evaluate(a) => evaluate(a, out),
    }
}

/// Resolves the simulation config: the preset or file, then explicit flags.
pub fn simulation_config(a: &GenerateArgs) -> Result<SimulationConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| domain(format!("{}: {e}", path.display())))?;
            SimulationConfig::parse(&text).map_err(|e| domain(format!("{}: {e}", path.display())))?
        }
        None => preset(&a.preset).map_err(|e| CliError::Usage(e.to_string()))?,
    };
    if let Some(n) = a.frames {
        cfg.trajectory.frame_count = n as usize;
    }
    if let Some(s) = a.seed {
        cfg.scene.seed = s;
    }
    if let Some(n) = a.noise {
        cfg.noise.enabled = n == Switch::On;
    }
    if let Some(s) = a.sigma_s {
        cfg.noise.sigma_pixel = s;
    }
    if let Some(s) = a.sigma_d {
        cfg.noise.sigma_depth = s;
    }
    cfg.noise.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn generate(a: &GenerateArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let cfg = simulation_config(a)?;
    let (seq, report) = cfg.generate().map_err(domain)?;
    for w in report.warnings() {
        let _ = writeln!(err, "warning: {w}");
    }
    write_sequence(&seq, &a.out).map_err(domain)?;
    let _ = writeln!(
        err,
        "generated {} frames ({} point, {} line landmarks; dropped {} point and {} line measurements)",
        seq.len(),
        seq.point_landmarks.len(),
        seq.line_landmarks.len(),
        report.dropped_points,
        report.dropped_lines
    );
    Ok(())
}

fn stats(a: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seq = read_sequence(&a.seq).map_err(domain)?;
    let csv = stats_csv(&compute_stats(&seq));
    match &a.out {
        Some(path) => write_atomic(path, csv.as_bytes()).map_err(domain),
        None => out.write_all(csv.as_bytes()).map_err(domain),
    }
}

fn track_cmd(a: &TrackArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let seq = read_sequence(&a.seq).map_err(domain)?;
    let cfg = TrackingConfig::default();
    let mode = match a.mode {
        Mode::Ftf => TrackingMode::FrameToFrame,
        Mode::Mtf => TrackingMode::MapToFrame,
    };
    let result = track(&seq, mode, &cfg).map_err(domain)?;
    write_trajectory(&Trajectory::from_poses(result.poses.clone()), &a.out).map_err(domain)?;
    if let Some(path) = &a.graph {
        let map = match result.map {
            Some(map) => map,
            None => build_map(&seq, &result.poses, &cfg).map_err(domain)?,
        };
        let graph = build_covisibility_graph(&seq, &result.poses, &map.landmarks()).map_err(domain)?;
        write_atomic(path, format_graph(&graph).as_bytes()).map_err(domain)?;
    }
    let mean = result.reprojection_errors.iter().sum::<f64>() / result.reprojection_errors.len().max(1) as f64;
    let _ = writeln!(err, "tracked {} frames, mean reprojection error {mean:.4} px", result.poses.len());
    Ok(())
}

fn default_trace_path(graph_out: &Path) -> PathBuf {
    match graph_out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.join(COST_TRACE_FILE),
        _ => PathBuf::from(COST_TRACE_FILE),
    }
}

fn optimize_cmd(a: &OptimizeArgs, err: &mut dyn Write) -> Result<(), CliError> {
    let mut graph = read_graph(&a.graph).map_err(domain)?;
    let method = match a.method {
        Method::Point => BaMethod::PointBa,
        Method::Pointline => BaMethod::PointLineBa,
    };
    let cfg = SolverConfig { max_iterations: a.iters as usize, ..SolverConfig::with_method(method) };
    let report = optimize(&mut graph, &cfg).map_err(domain)?;
    let trace = a.trace.clone().unwrap_or_else(|| default_trace_path(&a.out));
    write_atomic(&trace, cost_trace_csv(&report).as_bytes()).map_err(domain)?;
    write_atomic(&a.out, format_graph(&graph).as_bytes()).map_err(domain)?;
    if let Some(path) = &a.traj {
        let (frame_ids, poses) = graph.trajectory().into_iter().unzip();
        write_trajectory(&Trajectory { frame_ids, poses }, path).map_err(domain)?;
    }
    let _ = writeln!(
        err,
        "cost {:e} -> {:e} after {} iterations ({} accepted, {} rejected)",
        report.initial_cost, report.final_cost, report.iterations, report.accepted_steps, report.rejected_steps
    );
    Ok(())
}

fn summary_line(label: &str, s: &MetricSummary) -> String {
    format!("{label} rmse {:.6} median {:.6} mean {:.6} std {:.6} max {:.6}", s.rmse, s.median, s.mean, s.std, s.max)
}

/// Text summary: frame count, then translation in cm and rotation in degrees.
pub fn format_summary(metric: Metric, series: &ErrorSeries) -> String {
    let name = match metric {
        Metric::Ate => "ate",
        Metric::Rpe => "rpe",
    };
    format!(
        "metric {name} frames {}\n{}\n{}\n",
        series.frame_ids.len(),
        summary_line("translation_cm", &series.translation_summary().scaled(100.0)),
        summary_line("rotation_deg", &series.rotation_summary())
    )
}

fn evaluate(a: &EvaluateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let gt = read_trajectory(&a.gt).map_err(domain)?;
    let est = read_trajectory(&a.est).map_err(domain)?;
    let series = match a.metric {
        Metric::Ate => ate(&est, &gt).map_err(domain)?.errors,
        Metric::Rpe => rpe(&est, &gt, a.delta as usize).map_err(domain)?,
    };
    if let Some(path) = &a.out {
        write_atomic(path, series.to_csv().as_bytes()).map_err(domain)?;
    }
    out.write_all(format_summary(a.metric, &series).as_bytes()).map_err(domain)
}
