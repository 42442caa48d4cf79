//! Levenberg-Marquardt bundle adjustment over a co-visibility graph
//! (point-only or point+line), with Schur elimination of the landmarks.

mod linear;

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Matrix6, SMatrix, Vector2, Vector3, Vector4, Vector6};
use rayon::prelude::*;
use thiserror::Error;

pub use linear::{LandmarkBlock, NormalEquations, NotPositiveDefinite, Step};

use crate::factor_graph::{FactorError, FactorGraph, line_jacobians, point_jacobians};
use crate::geometry::CameraIntrinsics;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaMethod {
    PointBa,
    PointLineBa,
}

impl BaMethod {
    pub fn uses_lines(self) -> bool {
        self == Self::PointLineBa
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RobustKernel {
    None,
    /// Threshold in whitened pixels.
    Huber(f64),
}

impl RobustKernel {
    pub const DEFAULT_HUBER: f64 = 2.447_447_650_962_614; // sqrt(5.99)

    /// `(rho(s), rho'(s))` for a weighted squared residual `s`.
    fn eval(self, s: f64) -> (f64, f64) {
        match self {
            Self::None => (s, 1.0),
            Self::Huber(d) => {
                if s <= d * d {
                    (s, 1.0)
                } else {
                    let r = s.sqrt();
                    (2.0 * d * r - d * d, d / r)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: BaMethod,
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_factor: f64,
    /// Stop once an iteration decreases the cost by less than this fraction.
    pub relative_tolerance: f64,
    /// Total squared pixel error treated as zero; reaching it ends the run.
    pub absolute_tolerance: f64,
    /// Landmarks whose observation rays (points) or back-projected planes
    /// (lines) span a smaller angle stay fixed (degrees).
    pub min_parallax_deg: f64,
    pub kernel: RobustKernel,
    /// Damping increases tried within one iteration before giving up.
    pub max_retries: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: BaMethod::PointLineBa,
            max_iterations: 15,
            initial_lambda: 1e-4,
            lambda_factor: 10.0,
            relative_tolerance: 1e-8,
            absolute_tolerance: 1e-16,
            min_parallax_deg: 1.0,
            kernel: RobustKernel::None,
            max_retries: 10,
        }
    }
}

impl SolverConfig {
    pub fn with_method(method: BaMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidConfig(m.into()));
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.initial_lambda > 0.0) || !self.initial_lambda.is_finite() {
            return bad("initial damping must be positive");
        }
        if !(self.lambda_factor > 1.0) || !self.lambda_factor.is_finite() {
            return bad("damping factor must exceed 1");
        }
        if !(self.relative_tolerance >= 0.0) {
            return bad("relative tolerance must be non-negative");
        }
        if !(self.absolute_tolerance >= 0.0) {
            return bad("absolute tolerance must be non-negative");
        }
        if !(0.0..90.0).contains(&self.min_parallax_deg) {
            return bad("minimum parallax must lie in [0, 90) degrees");
        }
        if let RobustKernel::Huber(d) = self.kernel {
            if !(d > 0.0 && d.is_finite()) {
                return bad("Huber threshold must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimizeError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Graph(#[from] FactorError),
    #[error("reduced system is not positive definite at iteration {iteration} (damping {lambda:e})")]
    NotPositiveDefinite { iteration: usize, lambda: f64 },
}

/// One evaluated state: the initial one, or a trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Robust cost in squared pixels.
    pub cost: f64,
    /// `cost / (fx * fy)`.
    pub normalized_cost: f64,
    pub lambda: f64,
    pub accepted: bool,
    /// Factors that could not be evaluated in this state.
    pub invalid_factors: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Landmark updates skipped because their block was singular.
    pub held_landmarks: usize,
    pub converged: bool,
}

impl OptimizationReport {
    /// Cost after each accepted step, starting with the initial cost.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.trace.iter().filter(|t| t.accepted).map(|t| t.cost).collect()
    }

    /// Cost at the end of every iteration, starting with the initial cost.
    pub fn cost_per_iteration(&self) -> Vec<f64> {
        let mut out = vec![self.initial_cost];
        for it in 1..=self.iterations {
            let last = self.trace.iter().filter(|t| t.iteration == it && t.accepted).map(|t| t.cost).next_back();
            out.push(last.unwrap_or(*out.last().unwrap()));
        }
        out
    }
}

pub const COST_TRACE_HEADER: &str = "iteration,pixel_cost,normalized_cost,lambda,accepted";

pub fn cost_trace_csv(report: &OptimizationReport) -> String {
    let mut out = String::from(COST_TRACE_HEADER);
    out.push('\n');
    for t in &report.trace {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{}", t.iteration, t.cost, t.normalized_cost, t.lambda, t.accepted as u8);
    }
    out
}

/// Factor indices grouped per landmark, plus the optimization slots.
struct Layout {
    /// Free-pose block of each pose vertex.
    pose_block: Vec<Option<usize>>,
    free_poses: Vec<usize>,
    point_factors: Vec<Vec<usize>>,
    line_factors: Vec<Vec<usize>>,
    /// Landmarks without enough parallax stay frozen.
    point_active: Vec<bool>,
    line_active: Vec<bool>,
}

/// Largest angle between any two of the unit vectors; with `unsigned`,
/// `v` and `-v` count as the same direction.
fn max_spread(dirs: &[Vector3<f64>], unsigned: bool) -> f64 {
    let mut min_cos: f64 = 1.0;
    for (i, a) in dirs.iter().enumerate() {
        for b in &dirs[i + 1..] {
            let c = a.dot(b);
            min_cos = min_cos.min(if unsigned { c.abs() } else { c });
        }
    }
    min_cos.clamp(-1.0, 1.0).acos()
}

fn distinct_poses(factors: &[usize], pose_of: impl Fn(usize) -> usize) -> usize {
    let mut poses: Vec<usize> = factors.iter().map(|&f| pose_of(f)).collect();
    poses.sort_unstable();
    poses.dedup();
    poses.len()
}

impl Layout {
    /// A landmark is optimized when it is seen from two poses and its views span
    /// `min_parallax` radians: the angle between the measured bearings for
    /// points, between the back-projected planes for lines. Anything less
    /// leaves it (nearly) unobservable along the viewing rays.
    fn new(graph: &FactorGraph, lines: bool, k: &CameraIntrinsics, min_parallax: f64) -> Self {
        let mut pose_block = vec![None; graph.poses.len()];
        let mut free_poses = Vec::new();
        for (i, v) in graph.poses.iter().enumerate() {
            if !v.fixed {
                pose_block[i] = Some(free_poses.len());
                free_poses.push(i);
            }
        }
        let mut point_factors = vec![Vec::new(); graph.points.len()];
        for (i, f) in graph.point_factors.iter().enumerate() {
            point_factors[f.point].push(i);
        }
        let mut line_factors = vec![Vec::new(); if lines { graph.lines.len() } else { 0 }];
        if lines {
            for (i, f) in graph.line_factors.iter().enumerate() {
                line_factors[f.line].push(i);
            }
        }
        let k_inv = |u: &Vector2<f64>| Vector3::new((u.x - k.cx) / k.fx, (u.y - k.cy) / k.fy, 1.0);
        let world = |pose: usize, v: Vector3<f64>| {
            let w = graph.poses[pose].pose.inverse().rotate(&v);
            w / w.norm()
        };
        let point_active = point_factors
            .par_iter()
            .map(|fs| {
                let rays: Vec<_> = fs
                    .iter()
                    .map(|&f| world(graph.point_factors[f].pose, k_inv(&graph.point_factors[f].measurement)))
                    .collect();
                distinct_poses(fs, |f| graph.point_factors[f].pose) >= 2 && max_spread(&rays, false) >= min_parallax
            })
            .collect();
        let line_active = line_factors
            .par_iter()
            .map(|fs| {
                let planes: Vec<_> = fs
                    .iter()
                    .filter_map(|&f| {
                        let lf = &graph.line_factors[f];
                        let n = k_inv(&lf.start).cross(&k_inv(&lf.end));
                        (n.norm() > 0.0).then(|| world(lf.pose, n))
                    })
                    .collect();
                distinct_poses(fs, |f| graph.line_factors[f].pose) >= 2 && max_spread(&planes, true) >= min_parallax
            })
            .collect();
        Self { pose_block, free_poses, point_factors, line_factors, point_active, line_active }
    }
}

/// Partial normal equations of one landmark and its factors.
struct Contribution {
    block: Option<LandmarkBlock>,
    poses: Vec<(usize, Matrix6<f64>, Vector6<f64>)>,
}

fn accumulate<const K: usize>(
    rows: &[(f64, Vector2<f64>, SMatrix<f64, 2, 6>, SMatrix<f64, 2, K>, Option<usize>)],
    active: bool,
) -> Contribution {
    let mut hl = SMatrix::<f64, K, K>::zeros();
    let mut gl = SMatrix::<f64, K, 1>::zeros();
    let mut links = Vec::new();
    let mut poses = Vec::new();
    for (w, r, jp, jl, block) in rows {
        if active {
            hl += jl.transpose() * jl * *w;
            gl += jl.transpose() * r * *w;
        }
        if let Some(b) = block {
            poses.push((*b, jp.transpose() * jp * *w, jp.transpose() * r * *w));
            if active {
                let link = jp.transpose() * jl * *w;
                links.push((*b, DMatrix::from_column_slice(6, K, link.as_slice())));
            }
        }
    }
    let block = active.then(|| LandmarkBlock {
        hessian: DMatrix::from_column_slice(K, K, hl.as_slice()),
        gradient: DVector::from_column_slice(gl.as_slice()),
        links,
    });
    Contribution { block, poses }
}

struct Problem<'a> {
    k: CameraIntrinsics,
    cfg: &'a SolverConfig,
    layout: Layout,
}

impl Problem<'_> {
    /// Robust cost of a state and the number of factors it could not evaluate.
    fn cost(&self, graph: &FactorGraph) -> (f64, usize) {
        let k = &self.k;
        let kernel = self.cfg.kernel;
        let terms: Vec<Option<f64>> = graph
            .point_factors
            .par_iter()
            .map(|f| {
                crate::factor_graph::point_residual(&f.measurement, &graph.points[f.point].position, &graph.poses[f.pose].pose, k)
                    .ok()
                    .map(|r| kernel.eval(f.weight * r.norm_squared()).0)
            })
            .chain(graph.line_factors.par_iter().filter(|_| self.cfg.method.uses_lines()).map(|f| {
                crate::factor_graph::line_residual(&f.start, &f.end, graph.lines[f.line].plucker(), &graph.poses[f.pose].pose, k)
                    .ok()
                    .map(|r| kernel.eval(f.weight * r.norm_squared()).0)
            }))
            .collect();
        let invalid = terms.iter().filter(|t| t.is_none()).count();
        (terms.iter().flatten().sum(), invalid)
    }

    fn linearize(&self, graph: &FactorGraph) -> NormalEquations {
        let k = &self.k;
        let kernel = self.cfg.kernel;
        let layout = &self.layout;
        let irls = |w: f64, r: &Vector2<f64>| w * kernel.eval(w * r.norm_squared()).1;

        let points: Vec<Contribution> = (0..graph.points.len())
            .into_par_iter()
            .map(|p| {
                let rows: Vec<_> = layout.point_factors[p]
                    .iter()
                    .filter_map(|&fi| {
                        let f = &graph.point_factors[fi];
                        let (r, jp, jl) =
                            point_jacobians(&f.measurement, &graph.points[p].position, &graph.poses[f.pose].pose, k).ok()?;
                        Some((irls(f.weight, &r), r, jp, jl, layout.pose_block[f.pose]))
                    })
                    .collect();
                accumulate::<3>(&rows, layout.point_active[p])
            })
            .collect();
        let lines: Vec<Contribution> = (0..layout.line_factors.len())
            .into_par_iter()
            .map(|l| {
                let v = &graph.lines[l];
                let rows: Vec<_> = layout.line_factors[l]
                    .iter()
                    .filter_map(|&fi| {
                        let f = &graph.line_factors[fi];
                        let (r, jp, jl) =
                            line_jacobians(&f.start, &f.end, v.orthonormal(), &graph.poses[f.pose].pose, k).ok()?;
                        Some((irls(f.weight, &r), r, jp, jl, layout.pose_block[f.pose]))
                    })
                    .collect();
                accumulate::<4>(&rows, layout.line_active[l])
            })
            .collect();

        let n = layout.free_poses.len();
        let mut ne = NormalEquations {
            pose_hessian: vec![Matrix6::zeros(); n],
            pose_gradient: vec![Vector6::zeros(); n],
            landmarks: Vec::new(),
        };
        for c in points.into_iter().chain(lines) {
            for (b, h, g) in c.poses {
                ne.pose_hessian[b] += h;
                ne.pose_gradient[b] += g;
            }
            ne.landmarks.extend(c.block);
        }
        ne
    }

    fn apply(&self, graph: &FactorGraph, step: &Step) -> FactorGraph {
        let mut out = graph.clone();
        for (b, &pi) in self.layout.free_poses.iter().enumerate() {
            out.poses[pi].pose = graph.poses[pi].pose.retract(&step.poses[b]);
        }
        let mut deltas = step.landmarks.iter();
        // step landmarks follow the active points, then the active lines
        let points = self.layout.point_active.iter().enumerate().filter(|(_, a)| **a).map(|(p, _)| p);
        for (p, d) in points.zip(deltas.by_ref()) {
            if let Some(d) = d {
                out.points[p].position += Vector3::new(d[0], d[1], d[2]);
            }
        }
        let lines = self.layout.line_active.iter().enumerate().filter(|(_, a)| **a).map(|(l, _)| l);
        for (l, d) in lines.zip(deltas) {
            if let Some(d) = d {
                out.lines[l] = graph.lines[l].updated(&Vector4::new(d[0], d[1], d[2], d[3]));
            }
        }
        out
    }
}

/// Normal equations of `graph` at its current state, laid out as the solver
/// sees them: one block per free pose and per landmark observed from at
/// least two poses.
pub fn normal_equations(graph: &FactorGraph, cfg: &SolverConfig) -> Result<NormalEquations, OptimizeError> {
    cfg.validate()?;
    graph.validate()?;
    let Some(k) = graph.camera else {
        return Ok(NormalEquations::default());
    };
    let problem = Problem { k, cfg, layout: Layout::new(graph, cfg.method.uses_lines(), &k, cfg.min_parallax_deg.to_radians()) };
    Ok(problem.linearize(graph))
}

/// Runs Levenberg-Marquardt on `graph` in place. Fixed poses and
/// landmarks without two-view parallax are left untouched; with
/// [`BaMethod::PointBa`] line vertices and factors are ignored.
pub fn optimize(graph: &mut FactorGraph, cfg: &SolverConfig) -> Result<OptimizationReport, OptimizeError> {
    cfg.validate()?;
    graph.validate()?;
    let Some(k) = graph.camera else {
        return Ok(OptimizationReport {
            trace: vec![],
            iterations: 0,
            accepted_steps: 0,
            rejected_steps: 0,
            initial_cost: 0.0,
            final_cost: 0.0,
            held_landmarks: 0,
            converged: true,
        });
    };
    let problem = Problem { k, cfg, layout: Layout::new(graph, cfg.method.uses_lines(), &k, cfg.min_parallax_deg.to_radians()) };
    let scale = 1.0 / (k.fx * k.fy);
    let (mut cost, invalid) = problem.cost(graph);
    let mut state = graph.clone();
    let mut report = OptimizationReport {
        trace: vec![TraceEntry {
            iteration: 0,
            cost,
            normalized_cost: cost * scale,
            lambda: cfg.initial_lambda,
            accepted: true,
            invalid_factors: invalid,
        }],
        iterations: 0,
        accepted_steps: 0,
        rejected_steps: 0,
        initial_cost: cost,
        final_cost: cost,
        held_landmarks: 0,
        converged: false,
    };
    let mut lambda = cfg.initial_lambda;

    for iteration in 1..=cfg.max_iterations {
        if cost <= cfg.absolute_tolerance {
            report.converged = true;
            break;
        }
        report.iterations = iteration;
        let ne = problem.linearize(&state);
        let mut accepted = false;
        let mut solved_once = false;
        for _ in 0..=cfg.max_retries {
            let step = match ne.solve_schur(lambda) {
                Ok(s) => s,
                Err(NotPositiveDefinite) => {
                    lambda *= cfg.lambda_factor;
                    continue;
                }
            };
            solved_once = true;
            let trial = problem.apply(&state, &step);
            let (trial_cost, invalid) = problem.cost(&trial);
            let improves = trial_cost < cost;
            let small = improves && (cost - trial_cost) <= cfg.relative_tolerance * cost;
            if small {
                // converged: the remaining decrease is negligible, keep the state
                report.converged = true;
                break;
            }
            report.trace.push(TraceEntry {
                iteration,
                cost: trial_cost,
                normalized_cost: trial_cost * scale,
                lambda,
                accepted: improves,
                invalid_factors: invalid,
            });
            if improves {
                report.held_landmarks += step.held();
                state = trial;
                cost = trial_cost;
                report.accepted_steps += 1;
                lambda = (lambda / cfg.lambda_factor).max(1e-12);
                accepted = true;
                break;
            }
            report.rejected_steps += 1;
            lambda *= cfg.lambda_factor;
        }
        if !solved_once {
            return Err(OptimizeError::NotPositiveDefinite { iteration, lambda });
        }
        if !accepted {
            report.converged = true;
            break;
        }
    }
    report.final_cost = cost;
    *graph = state;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor_graph::{InitialLandmarks, build_covisibility_graph};
    use crate::geometry::Pose;
    use crate::simulator::preset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noiseless_graph(frames: usize) -> (FactorGraph, Vec<Pose>) {
        let mut cfg = preset("box").unwrap();
        cfg.trajectory.frame_count = frames;
        cfg.noise.enabled = false;
        let seq = cfg.generate().unwrap().0;
        let g = build_covisibility_graph(&seq, &seq.groundtruth, &InitialLandmarks::from_groundtruth(&seq).unwrap()).unwrap();
        (g, seq.groundtruth)
    }

    #[test]
    fn optimum_terminates_unchanged() {
        let (mut g, _) = noiseless_graph(5);
        let before = g.clone();
        let report = optimize(&mut g, &SolverConfig::default()).unwrap();
        assert!(report.iterations <= 1);
        assert_eq!(g, before);
        assert!(report.converged);
    }

    #[test]
    fn perturbed_poses_are_recovered() {
        let (mut g, gt) = noiseless_graph(10);
        // scale is unobservable from pixels alone, so anchor a second pose
        g.poses[1].fixed = true;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in g.poses.iter_mut().filter(|v| !v.fixed) {
            let mut d = Vector6::zeros();
            for i in 0..3 {
                d[i] = rng.random_range(-1.0..1.0) * 0.5f64.to_radians() / 3f64.sqrt();
                d[i + 3] = rng.random_range(-1.0..1.0) * 0.01 / 3f64.sqrt();
            }
            v.pose = v.pose.retract(&d);
        }
        let fixed_before: Vec<_> = g.poses.iter().filter(|v| v.fixed).cloned().collect();
        for method in [BaMethod::PointBa, BaMethod::PointLineBa] {
            let mut g = g.clone();
            let report = optimize(&mut g, &SolverConfig::with_method(method)).unwrap();
            assert!(report.final_cost <= 1e-16, "{method:?}: {}", report.final_cost);
            let err = g.poses.iter().zip(&gt).map(|(v, p)| (v.pose.camera_center() - p.camera_center()).norm()).fold(0.0, f64::max);
            assert!(err < 1e-7, "{method:?}: {err}");
            let costs = report.accepted_costs();
            assert!(costs.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(g.poses.iter().filter(|v| v.fixed).cloned().collect::<Vec<_>>(), fixed_before);
            for l in &g.lines {
                assert!(l.plucker().satisfies_constraint(1e-10));
            }
        }
    }

    #[test]
    fn parallax_gate_selects_landmarks() {
        let (g, _) = noiseless_graph(6);
        let blocks = |deg: f64| {
            let cfg = SolverConfig { min_parallax_deg: deg, ..SolverConfig::default() };
            normal_equations(&g, &cfg).unwrap().landmarks.len()
        };
        let multi_view = |pose_of: &dyn Fn(usize) -> (usize, usize), n: usize, count: usize| {
            let mut views = vec![std::collections::BTreeSet::new(); count];
            for i in 0..n {
                let (lm, pose) = pose_of(i);
                views[lm].insert(pose);
            }
            views.iter().filter(|v| v.len() >= 2).count()
        };
        let expected = multi_view(&|i| (g.point_factors[i].point, g.point_factors[i].pose), g.point_factors.len(), g.points.len())
            + multi_view(&|i| (g.line_factors[i].line, g.line_factors[i].pose), g.line_factors.len(), g.lines.len());
        assert_eq!(blocks(0.0), expected);
        assert!(blocks(1.0) < expected);
        assert_eq!(blocks(89.0), 0);
    }

    #[test]
    fn spread_ignores_sign_for_planes() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(-1.0, 0.0, 0.0);
        assert!((max_spread(&[a, b], false) - std::f64::consts::PI).abs() < 1e-12);
        assert_eq!(max_spread(&[a, b], true), 0.0);
        assert_eq!(max_spread(&[a], false), 0.0);
    }

    #[test]
    fn trace_csv_layout() {
        let (mut g, _) = noiseless_graph(3);
        g.points[0].position.x += 0.01;
        let report = optimize(&mut g, &SolverConfig::default()).unwrap();
        let csv = cost_trace_csv(&report);
        assert!(csv.starts_with("iteration,pixel_cost,normalized_cost,lambda,accepted\n0,"));
        assert_eq!(csv.lines().count(), report.trace.len() + 1);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let mut g = FactorGraph::default();
        let cfg = SolverConfig { max_iterations: 0, ..SolverConfig::default() };
        assert!(matches!(optimize(&mut g, &cfg), Err(OptimizeError::InvalidConfig(_))));
        let cfg = SolverConfig { kernel: RobustKernel::Huber(-1.0), ..SolverConfig::default() };
        assert!(matches!(optimize(&mut g, &cfg), Err(OptimizeError::InvalidConfig(_))));
    }
}
