//! Shared fixtures and the end-to-end property checks used by several test
//! targets.

#![allow(dead_code)]

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::{DMatrix, SMatrix, UnitQuaternion, Vector2, Vector3, Vector4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use plbench::evaluation::{ate, rpe};
use plbench::factor_graph::{
    FactorGraph, InitialLandmarks, LineFactor, LineVertex, PointFactor, PointVertex, PoseVertex, build_covisibility_graph,
    line_jacobians, line_residual, point_jacobians, point_residual,
};
use plbench::geometry::{CameraIntrinsics, OrthonormalLine, PluckerLine, Pose};
use plbench::io::{
    SequenceFiles, Trajectory, compute_frame_stats, format_graph, format_sequence, format_trajectory, parse_graph, parse_sequence,
    parse_trajectory,
};
use plbench::optimizer::{BaMethod, OptimizationReport, SolverConfig, normal_equations, optimize};
use plbench::sequence::{Endpoint, Frame, LineId, LineMeasurement, PointId, PointMeasurement, Sequence};
use plbench::simulator::{DEFAULT_DISPARITY_CONSTANT, disparity_depth, perturb_pixel, preset};
use plbench::tracking::{TrackingConfig, TrackingMode, group_parallel_lines, track};

/// Outcome of one property check.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self { passed, detail: detail.into() }
    }
}

pub fn camera() -> CameraIntrinsics {
    CameraIntrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480).unwrap()
}

pub fn sequence(preset_name: &str, frames: Option<usize>, seed: Option<u64>, noise: bool) -> Sequence {
    let mut cfg = preset(preset_name).unwrap();
    if let Some(n) = frames {
        cfg.trajectory.frame_count = n;
    }
    if let Some(s) = seed {
        cfg.scene.seed = s;
    }
    cfg.noise.enabled = noise;
    cfg.generate().unwrap().0
}

pub fn graph_trajectory(graph: &FactorGraph) -> Trajectory {
    let (frame_ids, poses) = graph.trajectory().into_iter().unzip();
    Trajectory { frame_ids, poses }
}

pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> f64 {
    ate(est, gt).unwrap().errors.translation_summary().rmse
}

/// ATE of FtF, MtF, Point-BA and PointLine-BA on one sequence; both BA
/// variants start from the map-to-frame estimate. `None` marks lost tracking.
#[derive(Debug, Clone, Copy)]
pub struct MethodErrors {
    pub ftf: Option<f64>,
    pub mtf: Option<f64>,
    pub point_ba: Option<f64>,
    pub pointline_ba: Option<f64>,
}

pub struct PipelineRun {
    pub errors: MethodErrors,
    /// Estimated trajectory per method that completed.
    pub trajectories: Vec<(&'static str, Trajectory)>,
    pub reports: Vec<OptimizationReport>,
}

pub fn run_pipeline(seq: &Sequence) -> PipelineRun {
    let gt = Trajectory::from_poses(seq.groundtruth.clone());
    let cfg = TrackingConfig::default();
    let mut trajectories = Vec::new();
    let ftf = track(seq, TrackingMode::FrameToFrame, &cfg).ok().map(|r| Trajectory::from_poses(r.poses));
    let mtf = track(seq, TrackingMode::MapToFrame, &cfg).ok();
    let mut errors = MethodErrors { ftf: ftf.as_ref().map(|t| ate_rmse(t, &gt)), mtf: None, point_ba: None, pointline_ba: None };
    if let Some(t) = ftf {
        trajectories.push(("FtF", t));
    }
    let mut reports = Vec::new();
    if let Some(result) = mtf {
        let traj = Trajectory::from_poses(result.poses.clone());
        errors.mtf = Some(ate_rmse(&traj, &gt));
        trajectories.push(("MtF", traj));
        let map = result.map.expect("map-to-frame keeps its map").landmarks();
        let graph = build_covisibility_graph(seq, &result.poses, &map).unwrap();
        for method in [BaMethod::PointBa, BaMethod::PointLineBa] {
            let mut g = graph.clone();
            let report = optimize(&mut g, &SolverConfig::with_method(method)).unwrap();
            let traj = graph_trajectory(&g);
            let e = Some(ate_rmse(&traj, &gt));
            match method {
                BaMethod::PointBa => {
                    errors.point_ba = e;
                    trajectories.push(("Point-BA", traj));
                }
                BaMethod::PointLineBa => {
                    errors.pointline_ba = e;
                    trajectories.push(("PointLine-BA", traj));
                }
            }
            reports.push(report);
        }
    }
    PipelineRun { errors, trajectories, reports }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }
}

pub fn exact_recovery() -> Check {
    let start = Instant::now();
    let seq = sequence("box", Some(100), None, false);
    let gt = Trajectory::from_poses(seq.groundtruth.clone());
    let run = run_pipeline(&seq);
    let mut worst: Vec<String> = Vec::new();
    let mut passed = run.trajectories.len() == 4;
    for (name, traj) in &run.trajectories {
        let t = ate_rmse(traj, &gt);
        let r = rpe(traj, &gt, 1).unwrap().rotation_summary().max;
        passed &= t <= 1e-4 && r <= 1e-4;
        worst.push(format!("{name} ate {t:.1e} m rpe {r:.1e} deg"));
    }
    let secs = start.elapsed().as_secs_f64();
    passed &= secs <= 60.0;
    Check::new(passed, format!("{} methods; {}; {secs:.1} s", run.trajectories.len(), worst.join(", ")))
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rot = UnitQuaternion::from_scaled_axis(axis * 0.5);
    let t = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Pose::new(rot, t)
}

/// World point whose camera-frame position lies in front of the camera and
/// projects inside a generous image window.
fn point_in_view(pose: &Pose, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let pc = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), 1.0) * rng.random_range(1.0..8.0);
    pose.inverse().transform_point(&pc)
}

fn rel_err<const R: usize, const C: usize>(a: &SMatrix<f64, R, C>, b: &SMatrix<f64, R, C>) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

/// Analytic residual Jacobians against central finite differences.
pub fn jacobian_gate(factors: usize, seed: u64) -> Check {
    let start = Instant::now();
    let k = camera();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_point: f64 = 0.0;
    let mut worst_line: f64 = 0.0;
    for i in 0..factors {
        let pose = random_pose(&mut rng);
        if i % 2 == 0 {
            let p = point_in_view(&pose, &mut rng);
            let u = k.project(&pose.transform_point(&p)).unwrap() + Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (_, jp, jl) = point_jacobians(&u, &p, &pose, &k).unwrap();
            let mut np = SMatrix::<f64, 2, 6>::zeros();
            for c in 0..6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                let plus = point_residual(&u, &p, &pose.retract(&d), &k).unwrap();
                let minus = point_residual(&u, &p, &pose.retract(&-d), &k).unwrap();
                np.set_column(c, &((plus - minus) / (2.0 * h)));
            }
            let mut nl = SMatrix::<f64, 2, 3>::zeros();
            for c in 0..3 {
                let mut d = Vector3::zeros();
                d[c] = h;
                let plus = point_residual(&u, &(p + d), &pose, &k).unwrap();
                let minus = point_residual(&u, &(p - d), &pose, &k).unwrap();
                nl.set_column(c, &((plus - minus) / (2.0 * h)));
            }
            worst_point = worst_point.max(rel_err(&jp, &np)).max(rel_err(&jl, &nl));
        } else {
            let a = point_in_view(&pose, &mut rng);
            let b = point_in_view(&pose, &mut rng);
            let ortho = OrthonormalLine::from_plucker(&PluckerLine::from_endpoints(&a, &b).unwrap()).unwrap();
            let line = ortho.to_plucker();
            let jitter = |rng: &mut ChaCha8Rng| Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let s = k.project(&pose.transform_point(&a)).unwrap() + jitter(&mut rng);
            let e = k.project(&pose.transform_point(&b)).unwrap() + jitter(&mut rng);
            let (_, jp, jl) = line_jacobians(&s, &e, &ortho, &pose, &k).unwrap();
            let mut np = SMatrix::<f64, 2, 6>::zeros();
            for c in 0..6 {
                let mut d = Vector6::zeros();
                d[c] = h;
                let plus = line_residual(&s, &e, &line, &pose.retract(&d), &k).unwrap();
                let minus = line_residual(&s, &e, &line, &pose.retract(&-d), &k).unwrap();
                np.set_column(c, &((plus - minus) / (2.0 * h)));
            }
            let mut nl = SMatrix::<f64, 2, 4>::zeros();
            for c in 0..4 {
                let mut d = Vector4::zeros();
                d[c] = h;
                let plus = line_residual(&s, &e, &ortho.update(&d).to_plucker(), &pose, &k).unwrap();
                let minus = line_residual(&s, &e, &ortho.update(&-d).to_plucker(), &pose, &k).unwrap();
                nl.set_column(c, &((plus - minus) / (2.0 * h)));
            }
            worst_line = worst_line.max(rel_err(&jp, &np)).max(rel_err(&jl, &nl));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let passed = worst_point <= 1e-5 && worst_line <= 1e-5 && secs <= 10.0;
    Check::new(passed, format!("{factors} factors; max rel err point {worst_point:.1e} line {worst_line:.1e}; {secs:.2} s"))
}

pub fn noise_fidelity(draws: usize, seed: u64) -> Check {
    let d = disparity_depth(2.0, 0.0, DEFAULT_DISPARITY_CONSTANT);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origin = Vector2::new(320.0, 240.0);
    let (mut sx, mut sy, mut sxx, mut syy) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        let e = perturb_pixel(&origin, 1.0, &mut rng) - origin;
        sx += e.x;
        sy += e.y;
        sxx += e.x * e.x;
        syy += e.y * e.y;
    }
    let n = draws as f64;
    let std_x = (sxx / n - (sx / n).powi(2)).sqrt();
    let std_y = (syy / n - (sy / n).powi(2)).sqrt();
    let band = 0.97..=1.03;
    let passed = (d - 1.999943).abs() <= 1e-6 && band.contains(&std_x) && band.contains(&std_y);
    Check::new(passed, format!("depth(2 m, alpha 0) = {d:.7}; pixel std x {std_x:.4} y {std_y:.4} over {draws} draws"))
}

/// Median-of-seeds ATE ordering on the box, and PointLine-BA against
/// Point-BA on the point-poor corridor.
pub fn ordering(seeds: &[u64]) -> (Check, Check) {
    let start = Instant::now();
    let mut box_runs = Vec::new();
    for &s in seeds {
        box_runs.push(run_pipeline(&sequence("box", Some(100), Some(s), true)).errors);
    }
    let complete: Vec<_> = box_runs.iter().filter(|e| e.ftf.is_some() && e.pointline_ba.is_some()).collect();
    let m = |f: &dyn Fn(&MethodErrors) -> Option<f64>| median(complete.iter().filter_map(|e| f(e)).collect());
    let (ftf, mtf, pba, plba) = (m(&|e| e.ftf), m(&|e| e.mtf), m(&|e| e.point_ba), m(&|e| e.pointline_ba));
    let box_ok = complete.len() == seeds.len() && pba <= mtf && mtf <= ftf && plba <= 1.1 * pba;
    let box_check = Check::new(
        box_ok,
        format!(
            "box median ATE over {}/{} seeds: FtF {ftf:.4} MtF {mtf:.4} Point-BA {pba:.4} PointLine-BA {plba:.4} (ratio {:.3})",
            complete.len(),
            seeds.len(),
            plba / pba
        ),
    );

    let mut corridor = Vec::new();
    let mut lost = 0;
    for &s in seeds {
        let e = run_pipeline(&sequence("corridor-lines", None, Some(s), true)).errors;
        match (e.point_ba, e.pointline_ba) {
            (Some(p), Some(l)) => corridor.push((p, l)),
            _ => lost += 1,
        }
    }
    let corridor_ok = !corridor.is_empty() && {
        let p = median(corridor.iter().map(|c| c.0).collect());
        let l = median(corridor.iter().map(|c| c.1).collect());
        l < p
    };
    let detail = if corridor.is_empty() {
        format!("corridor-lines: tracking lost on all {lost} seeds")
    } else {
        format!(
            "corridor-lines median ATE over {} seeds ({lost} lost): Point-BA {:.4} PointLine-BA {:.4}; {:.0} s total",
            corridor.len(),
            median(corridor.iter().map(|c| c.0).collect()),
            median(corridor.iter().map(|c| c.1).collect()),
            start.elapsed().as_secs_f64()
        )
    };
    let secs_ok = start.elapsed().as_secs_f64() <= 300.0;
    (Check::new(box_ok && secs_ok, box_check.detail), Check::new(corridor_ok && secs_ok, detail))
}

/// Share of the total cost decrease reached after three iterations, and
/// whether accepted costs never increase.
pub fn convergence_shape(report: &OptimizationReport) -> (f64, bool) {
    let costs = report.cost_per_iteration();
    let total = costs[0] - costs[costs.len() - 1];
    let third = costs[3.min(costs.len() - 1)];
    let share = if total > 0.0 { (costs[0] - third) / total } else { 1.0 };
    let monotone = report.accepted_costs().windows(2).all(|w| w[1] <= w[0]);
    (share, monotone)
}

pub fn convergence() -> Check {
    let seq = sequence("corridor", None, None, true);
    let mtf = match track(&seq, TrackingMode::MapToFrame, &TrackingConfig::default()) {
        Ok(r) => r,
        Err(e) => return Check::new(false, format!("tracking failed: {e}")),
    };
    let mut g = build_covisibility_graph(&seq, &mtf.poses, &mtf.map.unwrap().landmarks()).unwrap();
    let report = optimize(&mut g, &SolverConfig::with_method(BaMethod::PointBa)).unwrap();
    let (share, monotone) = convergence_shape(&report);
    let costs = report.cost_per_iteration();
    Check::new(
        share >= 0.9 && monotone,
        format!(
            "Point-BA normalized cost {:.3e} -> {:.3e}; {:.1}% of the decrease by iteration 3; monotone {monotone}",
            costs[0] / (seq.intrinsics.fx * seq.intrinsics.fy),
            costs[costs.len() - 1] / (seq.intrinsics.fx * seq.intrinsics.fy),
            100.0 * share
        ),
    )
}

pub fn random_frame(rng: &mut ChaCha8Rng, k: &CameraIntrinsics) -> Frame {
    let pixel = |rng: &mut ChaCha8Rng| {
        // bias some samples onto cell boundaries
        if rng.random_bool(0.2) {
            Vector2::new(10.0 * rng.random_range(0..64) as f64, 10.0 * rng.random_range(0..48) as f64)
        } else {
            Vector2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64))
        }
    };
    let points = (0..rng.random_range(0..60))
        .map(|i| PointMeasurement { landmark: PointId(i), pixel: pixel(rng), depth: 1.0 })
        .collect();
    let lines = (0..rng.random_range(0..20))
        .map(|i| LineMeasurement {
            landmark: LineId(i),
            start: Endpoint { pixel: pixel(rng), depth: 1.0 },
            end: Endpoint { pixel: pixel(rng), depth: 1.0 },
        })
        .collect();
    Frame { points, lines }
}

/// Occupied cells by hashing `(floor(x/10), floor(y/10))` of every point
/// and line endpoint.
pub fn occupied_cells_oracle(frame: &Frame) -> usize {
    let cell = |u: &Vector2<f64>| ((u.x / 10.0).floor() as i64, (u.y / 10.0).floor() as i64);
    let mut set = HashSet::new();
    for p in &frame.points {
        set.insert(cell(&p.pixel));
    }
    for l in &frame.lines {
        set.insert(cell(&l.start.pixel));
        set.insert(cell(&l.end.pixel));
    }
    set.len()
}

pub fn stats_oracle(frames: usize, seed: u64) -> Check {
    let k = camera();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for i in 0..frames {
        let f = random_frame(&mut rng, &k);
        let s = compute_frame_stats(i, &f, &k);
        if s.occupied_cells != occupied_cells_oracle(&f) || s.num_points != f.points.len() || s.num_lines != f.lines.len() {
            mismatches += 1;
        }
    }
    let line = Frame {
        points: vec![],
        lines: vec![LineMeasurement {
            landmark: LineId(0),
            start: Endpoint { pixel: Vector2::new(5.0, 5.0), depth: 1.0 },
            end: Endpoint { pixel: Vector2::new(95.0, 5.0), depth: 1.0 },
        }],
    };
    let two = compute_frame_stats(0, &line, &k).occupied_cells;
    Check::new(mismatches == 0 && two == 2, format!("{mismatches}/{frames} oracle mismatches; (5,5)-(95,5) line occupies {two} cells"))
}

pub fn random_segments(rng: &mut ChaCha8Rng, families: usize, per_family: usize, spread_deg: f64) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut out = Vec::new();
    for _ in 0..families {
        let base = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
        for _ in 0..per_family {
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let tilt = UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..spread_deg).to_radians());
            let mut dir = tilt * base;
            if rng.random_bool(0.5) {
                dir = -dir;
            }
            let start = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            out.push((start, start + dir * rng.random_range(0.2..3.0)));
        }
    }
    out
}

fn direction(l: &(Vector3<f64>, Vector3<f64>)) -> Vector3<f64> {
    (l.1 - l.0).normalize()
}

/// Largest pairwise angle (rad) within any group of rectified lines.
pub fn max_group_angle(groups: &[Vec<usize>], lines: &[(Vector3<f64>, Vector3<f64>)]) -> f64 {
    let mut worst: f64 = 0.0;
    for g in groups {
        for (i, &a) in g.iter().enumerate() {
            for &b in &g[i + 1..] {
                let c = direction(&lines[a]).dot(&direction(&lines[b])).abs().min(1.0);
                let s = direction(&lines[a]).cross(&direction(&lines[b])).norm();
                worst = worst.max(s.atan2(c));
            }
        }
    }
    worst
}

pub fn structural_exactness(trials: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut idempotent = true;
    for _ in 0..trials {
        let (families, per_family) = (rng.random_range(1..5), rng.random_range(1..8));
        let lines = random_segments(&mut rng, families, per_family, 4.0);
        let first = group_parallel_lines(&lines, 5.0);
        worst = worst.max(max_group_angle(&first.groups, &first.lines));
        let second = group_parallel_lines(&first.lines, 5.0);
        idempotent &= second.groups == first.groups && second.lines == first.lines;
    }
    Check::new(worst <= 1e-12 && idempotent, format!("{trials} random sets; max in-group angle {worst:.1e} rad; idempotent {idempotent}"))
}

/// Small synthetic graph: cameras on a ring looking at a cloud of points
/// and lines, with perturbed poses and landmarks. The first two poses are
/// fixed, which removes the scale gauge. Every landmark has at least two
/// views, the viewing planes of every line span at least 10 degrees and every
/// pose sees at least six points, so the undamped system is well conditioned.
pub fn ring_graph(rng: &mut ChaCha8Rng, poses: usize, points: usize, lines: usize) -> FactorGraph {
    let k = camera();
    let mut g = FactorGraph { camera: Some(k), ..Default::default() };
    for i in 0..poses {
        let a = i as f64 / poses as f64 * 1.2;
        let eye = Vector3::new(6.0 * a.cos(), 6.0 * a.sin(), rng.random_range(-0.5..0.5));
        let pose = Pose::look_at(&eye, &Vector3::zeros(), &Vector3::z()).unwrap();
        g.poses.push(PoseVertex { id: i, pose, fixed: i < 2 });
    }
    let jitter = |rng: &mut ChaCha8Rng| Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let views = |rng: &mut ChaCha8Rng| {
        let mut seen: Vec<bool> = (0..poses).map(|_| rng.random_bool(0.7)).collect();
        while seen.iter().filter(|&&v| v).count() < 2 {
            seen[rng.random_range(0..poses)] = true;
        }
        seen
    };
    let cloud = |rng: &mut ChaCha8Rng| Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let mut point_views: Vec<Vec<bool>> = (0..points).map(|_| views(rng)).collect();
    // every pose sees at least six points (or all of them)
    for i in 0..poses {
        while point_views.iter().filter(|v| v[i]).count() < 6.min(points) {
            let p = rng.random_range(0..points);
            point_views[p][i] = true;
        }
    }
    for (p, seen) in point_views.iter().enumerate() {
        let x = cloud(rng);
        for (i, v) in g.poses.iter().enumerate() {
            if seen[i] {
                let u = k.project(&v.pose.transform_point(&x)).unwrap() + jitter(rng);
                g.point_factors.push(PointFactor { pose: i, point: p, measurement: u, weight: 1.0 });
            }
        }
        g.points.push(PointVertex { id: PointId(p as u32), position: x + cloud(rng) * 0.02 });
    }
    for l in 0..lines {
        let seen = views(rng);
        // resample until the viewing planes through the line span 10 degrees
        let centres: Vec<Vector3<f64>> =
            (0..poses).filter(|&i| seen[i]).map(|i| g.poses[i].pose.inverse().transform_point(&Vector3::zeros())).collect();
        let (a, b) = loop {
            let (a, b) = (cloud(rng), cloud(rng));
            let normals: Vec<Vector3<f64>> = centres.iter().map(|c| (a - c).cross(&(b - c)).normalize()).collect();
            let spread = normals.iter().flat_map(|n| normals.iter().map(move |m| n.dot(m).abs())).fold(1.0, f64::min);
            if (a - b).norm() > 0.3 && spread <= 10f64.to_radians().cos() {
                break (a, b);
            }
        };
        for (i, v) in g.poses.iter().enumerate() {
            if seen[i] {
                let s = k.project(&v.pose.transform_point(&a)).unwrap() + jitter(rng);
                let e = k.project(&v.pose.transform_point(&b)).unwrap() + jitter(rng);
                g.line_factors.push(LineFactor { pose: i, line: l, start: s, end: e, weight: 1.0 });
            }
        }
        let line = PluckerLine::from_endpoints(&(a + cloud(rng) * 0.02), &(b + cloud(rng) * 0.02)).unwrap();
        g.lines.push(LineVertex::new(LineId(l as u32), line).unwrap());
    }
    for v in g.poses.iter_mut().skip(2) {
        let d = Vector6::from_fn(|i, _| rng.random_range(-1.0..1.0) * if i < 3 { 0.01 } else { 0.03 });
        v.pose = v.pose.retract(&d);
    }
    g
}

/// Largest relative difference between the Schur and the dense solution.
pub fn solver_equivalence(graphs: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut compared = 0;
    let mut failures = 0;
    for _ in 0..graphs {
        let poses = rng.random_range(3..=10);
        let points = rng.random_range(8..=30);
        let lines = rng.random_range(1..=(50 - points).min(20));
        let g = ring_graph(&mut rng, poses, points, lines);
        let ne = normal_equations(&g, &SolverConfig { min_parallax_deg: 0.0, ..SolverConfig::default() }).unwrap();
        for lambda in [0.0, 1e-4, 1e-1] {
            let (Ok(a), Ok(b)) = (ne.solve_schur(lambda), ne.solve_dense(lambda)) else {
                failures += 1;
                continue;
            };
            compared += 1;
            let flat = |s: &plbench::optimizer::Step| {
                let mut v: Vec<f64> = s.poses.iter().flat_map(|p| p.iter().copied()).collect();
                v.extend(s.landmarks.iter().flat_map(|l| l.as_ref().unwrap().iter().copied()));
                DMatrix::from_row_slice(1, v.len(), &v)
            };
            let (x, y) = (flat(&a), flat(&b));
            worst = worst.max((&x - &y).amax() / y.amax().max(1e-300));
        }
    }
    Check::new(
        failures == 0 && worst <= 1e-8,
        format!("{compared} solves over {graphs} graphs; {failures} failed; max rel diff {worst:.1e}"),
    )
}

pub fn initial_landmarks(seq: &Sequence) -> InitialLandmarks {
    InitialLandmarks::from_groundtruth(seq).unwrap()
}

pub fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let mut frame_ids = Vec::new();
    let mut id = 0;
    for _ in 0..n {
        id += rng.random_range(1..4);
        frame_ids.push(id);
    }
    Trajectory { frame_ids, poses: (0..n).map(|_| random_pose(rng)).collect() }
}

/// Field-identical round trips of a generated sequence, a factor graph and
/// random trajectories.
pub fn io_round_trips(seed: u64) -> Result<(), String> {
    let seq = sequence("box", Some(8), Some(seed), true);
    let back = parse_sequence(&format_sequence(&seq)).map_err(|e| e.to_string())?;
    if back != seq {
        return Err("sequence round trip differs".into());
    }
    let graph = build_covisibility_graph(&seq, &seq.groundtruth, &initial_landmarks(&seq)).unwrap();
    let back = parse_graph(&format_graph(&graph), "graph.txt").map_err(|e| e.to_string())?;
    if back != graph {
        return Err("graph round trip differs".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in [0, 1, 17] {
        let t = random_trajectory(&mut rng, n);
        let back = parse_trajectory(&format_trajectory(&t), "t.txt").map_err(|e| e.to_string())?;
        if back != t {
            return Err(format!("trajectory round trip differs (n = {n})"));
        }
    }
    Ok(())
}

fn mutate(rng: &mut ChaCha8Rng, text: &str) -> String {
    let mut bytes = text.as_bytes().to_vec();
    const ALPHABET: &[u8] = b"0123456789.-+eE \n#PLMGXYZNaninfVERTEX_POSEDGFIC\x00\xff";
    for _ in 0..rng.random_range(1..=8) {
        match rng.random_range(0..4) {
            0 if !bytes.is_empty() => {
                let i = rng.random_range(0..bytes.len());
                bytes[i] = ALPHABET[rng.random_range(0..ALPHABET.len())];
            }
            1 if !bytes.is_empty() => {
                let i = rng.random_range(0..bytes.len());
                bytes.remove(i);
            }
            2 => {
                let i = rng.random_range(0..=bytes.len());
                bytes.insert(i, rng.random());
            }
            _ if !bytes.is_empty() => {
                // duplicate or drop a slice
                let i = rng.random_range(0..bytes.len());
                let j = (i + rng.random_range(0..40)).min(bytes.len());
                if rng.random_bool(0.5) {
                    let chunk: Vec<u8> = bytes[i..j].to_vec();
                    bytes.splice(i..i, chunk);
                } else {
                    bytes.drain(i..j);
                }
            }
            _ => {}
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

/// Feeds `cases` mutated inputs to the sequence, graph and trajectory
/// parsers. Returns the number of panics and of inputs rejected with an error.
pub fn io_fuzz(cases: usize, seed: u64) -> (usize, usize) {
    let seq = sequence("box", Some(3), Some(seed), true);
    let files = format_sequence(&seq);
    let graph = format_graph(&build_covisibility_graph(&seq, &seq.groundtruth, &initial_landmarks(&seq)).unwrap());
    let traj = files.groundtruth.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut panics, mut rejected) = (0, 0);
    for i in 0..cases {
        let outcome = match i % 4 {
            0 => {
                let mut f = files.clone();
                match rng.random_range(0..5) {
                    0 => f.calib = mutate(&mut rng, &f.calib),
                    1 => f.groundtruth = mutate(&mut rng, &f.groundtruth),
                    2 => f.landmarks = mutate(&mut rng, &f.landmarks),
                    3 => f.parallel_groups = mutate(&mut rng, &f.parallel_groups),
                    _ => {
                        let j = rng.random_range(0..f.frames.len());
                        f.frames[j] = mutate(&mut rng, &f.frames[j]);
                    }
                }
                std::panic::catch_unwind(|| parse_sequence(&f).is_err())
            }
            1 | 2 => {
                let text = mutate(&mut rng, &graph);
                std::panic::catch_unwind(move || parse_graph(&text, "graph.txt").is_err())
            }
            _ => {
                let text = mutate(&mut rng, &traj);
                std::panic::catch_unwind(move || parse_trajectory(&text, "t.txt").is_err())
            }
        };
        match outcome {
            Ok(true) => rejected += 1,
            Ok(false) => {}
            Err(_) => panics += 1,
        }
    }
    (panics, rejected)
}

pub fn io_totality(cases: usize, seed: u64) -> Check {
    let trips = io_round_trips(seed);
    let hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    let (panics, rejected) = io_fuzz(cases, seed);
    std::panic::set_hook(hook);
    Check::new(
        trips.is_ok() && panics == 0,
        format!(
            "round trips {}; {cases} mutated inputs: {panics} panics, {rejected} rejected",
            trips.err().unwrap_or_else(|| "identical".into())
        ),
    )
}

pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

pub fn generated_files(preset_name: &str, frames: usize, seed: u64) -> SequenceFiles {
    format_sequence(&sequence(preset_name, Some(frames), Some(seed), true))
}

/// Bit patterns of every trace entry, so equality means bit-identical costs.
pub fn trace_bits(report: &OptimizationReport) -> Vec<(usize, u64, u64, bool)> {
    report.trace.iter().map(|t| (t.iteration, t.cost.to_bits(), t.lambda.to_bits(), t.accepted)).collect()
}

pub fn determinism() -> Check {
    let thread_counts = [1, 2, 4, 8];
    let seqs: Vec<SequenceFiles> = thread_counts.iter().map(|&n| with_threads(n, || generated_files("box", 30, 7))).collect();
    let same_seq = seqs.windows(2).all(|w| w[0] == w[1]);
    let seq = sequence("box", Some(30), Some(7), true);
    let mtf = track(&seq, TrackingMode::MapToFrame, &TrackingConfig::default()).unwrap();
    let graph = build_covisibility_graph(&seq, &mtf.poses, &mtf.map.unwrap().landmarks()).unwrap();
    let traces: Vec<_> = thread_counts
        .iter()
        .map(|&n| {
            with_threads(n, || {
                let mut g = graph.clone();
                let cfg = SolverConfig { max_iterations: 5, ..SolverConfig::with_method(BaMethod::PointLineBa) };
                let report = optimize(&mut g, &cfg).unwrap();
                (trace_bits(&report), format_graph(&g))
            })
        })
        .collect();
    let same_trace = traces.windows(2).all(|w| w[0] == w[1]);
    Check::new(
        same_seq && same_trace,
        format!("threads {thread_counts:?}: sequences identical {same_seq}; cost traces and states identical {same_trace}"),
    )
}
