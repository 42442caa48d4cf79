//! EPnP with Gauss-Newton refinement.

use nalgebra::{DMatrix, Matrix3, Matrix6, SMatrix, Vector2, Vector3, Vector6};

use super::TrackingError;
use crate::geometry::{CameraIntrinsics, Pose, rigid_align};

/// Relative eigenvalue below which the point cloud is treated as flat
/// along that principal axis.
const FLAT_RATIO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpSolution {
    /// `T_{c,w}`.
    pub pose: Pose,
    /// Mean pixel distance between measurements and re-projections.
    pub mean_reprojection_error: f64,
}

struct ControlFrame {
    /// Control points in world coordinates (3 for planar input, else 4).
    points: Vec<Vector3<f64>>,
    /// Barycentric weights per correspondence, one per control point.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(world: &[Vector3<f64>]) -> Result<ControlFrame, TrackingError> {
    let n = world.len() as f64;
    let c0 = world.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p - c0;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let largest = eig.eigenvalues[order[0]];
    if !(largest > 0.0) || eig.eigenvalues[order[1]] <= FLAT_RATIO * largest {
        return Err(TrackingError::Degenerate);
    }
    let planar = eig.eigenvalues[order[2]] <= FLAT_RATIO * largest;
    let axes: Vec<Vector3<f64>> = order
        .iter()
        .take(if planar { 2 } else { 3 })
        .map(|&i| eig.eigenvectors.column(i) * (eig.eigenvalues[i] / n).sqrt())
        .collect();
    let mut points = vec![c0];
    points.extend(axes.iter().map(|a| c0 + a));

    // alpha_j for j >= 1 are coordinates along the (orthogonal) axes
    let alphas = world
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a: Vec<f64> = axes.iter().map(|ax| d.dot(ax) / ax.norm_squared()).collect();
            a.insert(0, 1.0 - a.iter().sum::<f64>());
            a
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

/// Camera-frame points for one beta combination, sign-fixed to lie in front.
fn camera_points(frame: &ControlFrame, basis: &[Vec<Vector3<f64>>], betas: &[f64]) -> Vec<Vector3<f64>> {
    let nc = frame.points.len();
    let ctrl: Vec<Vector3<f64>> = (0..nc).map(|j| basis.iter().zip(betas).map(|(v, b)| v[j] * *b).sum()).collect();
    let mut pts: Vec<Vector3<f64>> =
        frame.alphas.iter().map(|a| a.iter().zip(&ctrl).map(|(w, c)| c * *w).sum()).collect();
    if pts.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        pts.iter_mut().for_each(|p| *p = -*p);
    }
    pts
}

fn pair_indices(nc: usize) -> Vec<(usize, usize)> {
    (0..nc).flat_map(|a| (a + 1..nc).map(move |b| (a, b))).collect()
}

/// Gauss-Newton on the control-point distance constraints
/// `|sum_k beta_k (v_k[a] - v_k[b])|^2 = |c_a - c_b|^2`.
fn refine_betas(frame: &ControlFrame, basis: &[Vec<Vector3<f64>>], betas: &mut [f64]) {
    let pairs = pair_indices(frame.points.len());
    let nb = betas.len();
    for _ in 0..10 {
        let mut jtj = DMatrix::<f64>::zeros(nb, nb);
        let mut jtr = nalgebra::DVector::<f64>::zeros(nb);
        for &(a, b) in &pairs {
            let dv: Vec<Vector3<f64>> = basis.iter().map(|v| v[a] - v[b]).collect();
            let diff: Vector3<f64> = dv.iter().zip(betas.iter()).map(|(d, w)| d * *w).sum();
            let r = diff.norm_squared() - (frame.points[a] - frame.points[b]).norm_squared();
            let row: Vec<f64> = dv.iter().map(|d| 2.0 * diff.dot(d)).collect();
            for i in 0..nb {
                jtr[i] += row[i] * r;
                for j in 0..nb {
                    jtj[(i, j)] += row[i] * row[j];
                }
            }
        }
        let Some(step) = jtj.clone().cholesky().map(|c| c.solve(&jtr)) else { break };
        betas.iter_mut().zip(step.iter()).for_each(|(b, s)| *b -= s);
        if step.norm() < 1e-14 {
            break;
        }
    }
}

/// Mean pixel error over correspondences in front of the camera; infinite
/// when fewer than half of them are.
fn reprojection_error(pose: &Pose, corrs: &[Correspondence], k: &CameraIntrinsics) -> f64 {
    let (total, count) = corrs
        .iter()
        .filter_map(|c| {
            let pc = pose.transform_point(&c.world);
            (pc.z > 0.0).then(|| (k.project_unchecked(&pc) - c.pixel).norm())
        })
        .fold((0.0, 0usize), |(t, n), e| (t + e, n + 1));
    if 2 * count < corrs.len() || count == 0 { f64::INFINITY } else { total / count as f64 }
}

/// Closed-form EPnP estimate (before refinement).
pub fn epnp(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<Pose, TrackingError> {
    if corrs.len() < 4 {
        return Err(TrackingError::InsufficientData { needed: 4, got: corrs.len() });
    }
    let world: Vec<Vector3<f64>> = corrs.iter().map(|c| c.world).collect();
    let frame = control_frame(&world)?;
    let nc = frame.points.len();

    let mut mtm = DMatrix::<f64>::zeros(3 * nc, 3 * nc);
    for (c, alphas) in corrs.iter().zip(&frame.alphas) {
        let x = (c.pixel.x - k.cx) / k.fx;
        let y = (c.pixel.y - k.cy) / k.fy;
        let mut r1 = vec![0.0; 3 * nc];
        let mut r2 = vec![0.0; 3 * nc];
        for (j, &a) in alphas.iter().enumerate() {
            r1[3 * j] = a;
            r1[3 * j + 2] = -a * x;
            r2[3 * j + 1] = a;
            r2[3 * j + 2] = -a * y;
        }
        for row in [&r1, &r2] {
            for i in 0..3 * nc {
                if row[i] == 0.0 {
                    continue;
                }
                for j in 0..3 * nc {
                    mtm[(i, j)] += row[i] * row[j];
                }
            }
        }
    }
    let eig = mtm.symmetric_eigen();
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n_basis = nc.min(4);
    let basis: Vec<Vec<Vector3<f64>>> = order
        .iter()
        .take(n_basis)
        .map(|&i| {
            let v = eig.eigenvectors.column(i);
            (0..nc).map(|j| Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])).collect()
        })
        .collect();

    let pairs = pair_indices(nc);
    let rho: Vec<f64> = pairs.iter().map(|&(a, b)| (frame.points[a] - frame.points[b]).norm_squared()).collect();
    let diffs = |k: usize, (a, b): (usize, usize)| basis[k][a] - basis[k][b];

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    // N = 1
    {
        let (mut num, mut den) = (0.0, 0.0);
        for (p, r) in pairs.iter().zip(&rho) {
            let d = diffs(0, *p).norm();
            num += d * r.sqrt();
            den += d * d;
        }
        let mut b = vec![0.0; n_basis];
        b[0] = num / den;
        candidates.push(b);
    }
    // N = 2 and N = 3 via linearization in the products beta_i beta_j
    for nb in 2..=3usize.min(n_basis) {
        let prods: Vec<(usize, usize)> = (0..nb).flat_map(|i| (i..nb).map(move |j| (i, j))).collect();
        if pairs.len() < prods.len() {
            continue;
        }
        let mut l = DMatrix::<f64>::zeros(pairs.len(), prods.len());
        for (row, p) in pairs.iter().enumerate() {
            for (col, &(i, j)) in prods.iter().enumerate() {
                let v = diffs(i, *p).dot(&diffs(j, *p));
                l[(row, col)] = if i == j { v } else { 2.0 * v };
            }
        }
        let rhs = nalgebra::DVector::from_column_slice(&rho);
        let Ok(sol) = l.svd(true, true).solve(&rhs, 1e-12) else { continue };
        let mut b = vec![0.0; n_basis];
        b[0] = sol[0].abs().sqrt();
        for i in 1..nb {
            let bii = prods.iter().position(|&p| p == (i, i)).map(|c| sol[c]).unwrap_or(0.0);
            let b0i = prods.iter().position(|&p| p == (0, i)).map(|c| sol[c]).unwrap_or(0.0);
            b[i] = bii.abs().sqrt() * if b0i * sol[0] >= 0.0 { 1.0 } else { -1.0 };
        }
        candidates.push(b);
    }

    let mut best: Option<(f64, Pose)> = None;
    for mut betas in candidates {
        refine_betas(&frame, &basis, &mut betas);
        let cam = camera_points(&frame, &basis, &betas);
        let Ok(pose) = rigid_align(&world, &cam) else { continue };
        let err = reprojection_error(&pose, corrs, k);
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(TrackingError::Degenerate)
}

/// Gauss-Newton on the reprojection error over the left pose increment.
pub fn refine_pose(initial: &Pose, corrs: &[Correspondence], k: &CameraIntrinsics, max_iterations: usize) -> Pose {
    let mut pose = *initial;
    let cost = |p: &Pose| -> f64 {
        corrs
            .iter()
            .map(|c| {
                let pc = p.transform_point(&c.world);
                if pc.z > 0.0 { (c.pixel - k.project_unchecked(&pc)).norm_squared() } else { 0.0 }
            })
            .sum()
    };
    let mut current = cost(&pose);
    for _ in 0..max_iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in corrs {
            let Ok((r, j, _)) = crate::factor_graph::point_jacobians(&c.pixel, &c.world, &pose, k) else { continue };
            let j: SMatrix<f64, 2, 6> = j;
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let Some(chol) = h.cholesky() else { break };
        let delta = -chol.solve(&g);
        let candidate = pose.retract(&delta);
        let next = cost(&candidate);
        if !(next <= current) {
            break;
        }
        pose = candidate;
        current = next;
        if delta.norm() < 1e-14 {
            break;
        }
    }
    pose
}

/// EPnP followed by at most `max_iterations` Gauss-Newton steps.
pub fn solve_pnp(corrs: &[Correspondence], k: &CameraIntrinsics, max_iterations: usize) -> Result<PnpSolution, TrackingError> {
    let initial = epnp(corrs, k)?;
    let pose = refine_pose(&initial, corrs, k, max_iterations);
    Ok(PnpSolution { pose, mean_reprojection_error: reprojection_error(&pose, corrs, k) })
}
