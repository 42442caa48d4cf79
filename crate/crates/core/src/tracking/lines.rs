//! RANSAC line fitting and parallel grouping of 3D segments.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::TrackingError;

#[derive(Debug, Clone, PartialEq)]
pub struct LineFit {
    pub start: Vector3<f64>,
    pub end: Vector3<f64>,
    /// Indices of the inlier points, ascending.
    pub inliers: Vec<usize>,
}

/// Centroid and unit principal axis of a point set. `None` when all
/// points coincide.
pub(crate) fn principal_axis(points: &[Vector3<f64>]) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let i = eig.eigenvalues.imax();
    if !(eig.eigenvalues[i] > 0.0) {
        return None;
    }
    Some((c, eig.eigenvectors.column(i).into_owned()))
}

/// Segment through `c` along `dir` spanning the extreme projections of
/// `points`. The direction is flipped to agree with `reference` if given.
pub(crate) fn extent(
    points: &[Vector3<f64>],
    c: &Vector3<f64>,
    mut dir: Vector3<f64>,
    reference: Option<&Vector3<f64>>,
) -> (Vector3<f64>, Vector3<f64>) {
    if reference.is_some_and(|r| r.dot(&dir) < 0.0) {
        dir = -dir;
    }
    let (lo, hi) = points
        .iter()
        .map(|p| (p - c).dot(&dir))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    (c + dir * lo, c + dir * hi)
}

fn distance_to_line(p: &Vector3<f64>, a: &Vector3<f64>, dir: &Vector3<f64>) -> f64 {
    (p - a).cross(dir).norm()
}

/// Fits a segment to `points` by RANSAC over 2-point hypotheses, then
/// refines the direction as the principal axis of the inliers. All pairs
/// are tried when there are no more than `iterations` of them.
pub fn fit_line_ransac<R: Rng>(
    points: &[Vector3<f64>],
    iterations: usize,
    inlier_thresh: f64,
    rng: &mut R,
) -> Result<LineFit, TrackingError> {
    let n = points.len();
    if n < 2 {
        return Err(TrackingError::InsufficientData { needed: 2, got: n });
    }
    let pairs = n * (n - 1) / 2;
    let hypotheses: Vec<(usize, usize)> = if pairs <= iterations {
        (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect()
    } else {
        (0..iterations)
            .map(|_| {
                let a = rng.random_range(0..n);
                let b = (a + rng.random_range(1..n)) % n;
                (a, b)
            })
            .collect()
    };

    let mut best: Option<Vec<usize>> = None;
    for (a, b) in hypotheses {
        let d = points[b] - points[a];
        let len = d.norm();
        if !(len > 0.0) {
            continue;
        }
        let dir = d / len;
        let inliers: Vec<usize> = (0..n).filter(|&i| distance_to_line(&points[i], &points[a], &dir) <= inlier_thresh).collect();
        if best.as_ref().is_none_or(|b| inliers.len() > b.len()) {
            best = Some(inliers);
        }
    }
    let inliers = best.ok_or(TrackingError::Degenerate)?;
    let selected: Vec<Vector3<f64>> = inliers.iter().map(|&i| points[i]).collect();
    let (c, dir) = principal_axis(&selected).ok_or(TrackingError::Degenerate)?;
    let (start, end) = extent(&selected, &c, dir, Some(&(points[inliers[inliers.len() - 1]] - points[inliers[0]])));
    Ok(LineFit { start, end, inliers })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelGrouping {
    /// Member indices per group, in input order.
    pub groups: Vec<Vec<usize>>,
    /// Unit mean direction per group.
    pub directions: Vec<Vector3<f64>>,
    /// Rectified `(start, end)` for every input line.
    pub lines: Vec<(Vector3<f64>, Vector3<f64>)>,
}

/// Members already this close to the group direction keep their endpoints,
/// which makes rectification a fixed point.
const PARALLEL_TOL: f64 = 1e-13;

/// Greedy clustering by direction angle against each group's first member.
/// Groups whose mean directions end up within the threshold are merged, so
/// regrouping the output reproduces the same groups. Each member is then
/// re-projected onto the line through its own midpoint along the group's
/// mean direction.
pub fn group_parallel_lines(lines: &[(Vector3<f64>, Vector3<f64>)], angle_thresh_deg: f64) -> ParallelGrouping {
    let cos_thresh = angle_thresh_deg.to_radians().cos();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut seeds: Vec<Vector3<f64>> = Vec::new();
    let mut sums: Vec<Vector3<f64>> = Vec::new();
    for (i, (s, e)) in lines.iter().enumerate() {
        let d = (e - s).normalize();
        match seeds.iter().position(|seed| seed.dot(&d).abs() >= cos_thresh) {
            Some(g) => {
                groups[g].push(i);
                sums[g] += if seeds[g].dot(&d) < 0.0 { -d } else { d };
            }
            None => {
                groups.push(vec![i]);
                seeds.push(d);
                sums.push(d);
            }
        }
    }
    // merging b into an earlier a keeps groups ordered by first member
    'merge: loop {
        for b in 1..groups.len() {
            let db = sums[b].normalize();
            for a in 0..b {
                let dot = sums[a].normalize().dot(&db);
                if dot.abs() >= cos_thresh {
                    let sb = if dot < 0.0 { -sums[b] } else { sums[b] };
                    sums[a] += sb;
                    let members = groups.remove(b);
                    sums.remove(b);
                    groups[a].extend(members);
                    groups[a].sort_unstable();
                    continue 'merge;
                }
            }
        }
        break;
    }
    let directions: Vec<Vector3<f64>> = sums.iter().map(|s| s.normalize()).collect();
    let mut out = lines.to_vec();
    for (members, g) in groups.iter().zip(&directions) {
        if members.len() < 2 {
            continue;
        }
        for &i in members {
            let (s, e) = lines[i];
            if (e - s).normalize().cross(g).norm() <= PARALLEL_TOL {
                continue;
            }
            let m = (s + e) * 0.5;
            out[i] = (m + g * (s - m).dot(g), m + g * (e - m).dot(g));
        }
    }
    ParallelGrouping { groups, directions, lines: out }
}
