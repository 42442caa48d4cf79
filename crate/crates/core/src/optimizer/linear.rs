//! Block-structured normal equations and their Schur-complement solve.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rayon::prelude::*;

/// Normal-equation blocks of one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkBlock {
    /// `J_l^T W J_l` (3x3 for points, 4x4 for lines).
    pub hessian: DMatrix<f64>,
    /// `J_l^T W r`.
    pub gradient: DVector<f64>,
    /// `(pose block, J_p^T W J_l)` per factor touching a free pose.
    pub links: Vec<(usize, DMatrix<f64>)>,
}

/// `H delta = -g` with block-diagonal pose/pose and landmark/landmark parts.
/// Poses only couple through landmarks because every factor joins exactly
/// one pose with one landmark.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormalEquations {
    pub pose_hessian: Vec<Matrix6<f64>>,
    pub pose_gradient: Vec<Vector6<f64>>,
    pub landmarks: Vec<LandmarkBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub poses: Vec<Vector6<f64>>,
    /// `None` for landmarks held fixed because their block was singular.
    pub landmarks: Vec<Option<DVector<f64>>>,
}

impl Step {
    pub fn held(&self) -> usize {
        self.landmarks.iter().filter(|l| l.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotPositiveDefinite;

fn damp(m: &mut DMatrix<f64>, lambda: f64) {
    for i in 0..m.nrows() {
        m[(i, i)] += lambda * m[(i, i)];
    }
}

impl NormalEquations {
    pub fn pose_dim(&self) -> usize {
        6 * self.pose_hessian.len()
    }

    fn damped_pose_block(&self, i: usize, lambda: f64) -> Matrix6<f64> {
        let mut a = self.pose_hessian[i];
        for d in 0..6 {
            a[(d, d)] += lambda * a[(d, d)];
        }
        a
    }

    /// Solves the system damped by `lambda * diag(H)`, eliminating landmarks
    /// first. Landmarks whose damped block is not positive definite are held
    /// fixed.
    pub fn solve_schur(&self, lambda: f64) -> Result<Step, NotPositiveDefinite> {
        let n = self.pose_dim();
        // per-landmark elimination terms, computed in parallel and reduced
        // sequentially in landmark order
        let eliminated: Vec<Option<(DMatrix<f64>, Vec<DMatrix<f64>>)>> = self
            .landmarks
            .par_iter()
            .map(|lm| {
                let mut c = lm.hessian.clone();
                damp(&mut c, lambda);
                let chol = c.cholesky()?;
                let c_inv = chol.inverse();
                let bc: Vec<DMatrix<f64>> = lm.links.iter().map(|(_, b)| b * &c_inv).collect();
                Some((c_inv, bc))
            })
            .collect();

        let mut s = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        for i in 0..self.pose_hessian.len() {
            s.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(&self.damped_pose_block(i, lambda));
            rhs.fixed_rows_mut::<6>(6 * i).copy_from(&(-self.pose_gradient[i]));
        }
        for (lm, elim) in self.landmarks.iter().zip(&eliminated) {
            let Some((_, bc)) = elim else { continue };
            for ((i, _), bci) in lm.links.iter().zip(bc) {
                let add = bci * &lm.gradient;
                let mut rows = rhs.rows_mut(6 * i, 6);
                rows += add;
                for (j, bj) in &lm.links {
                    let mut block = s.view_mut((6 * i, 6 * j), (6, 6));
                    block -= bci * bj.transpose();
                }
            }
        }
        let dp = if n == 0 {
            DVector::zeros(0)
        } else {
            s.cholesky().ok_or(NotPositiveDefinite)?.solve(&rhs)
        };

        let landmarks = self
            .landmarks
            .iter()
            .zip(&eliminated)
            .map(|(lm, elim)| {
                let (c_inv, _) = elim.as_ref()?;
                let mut r = -&lm.gradient;
                for (i, b) in &lm.links {
                    r -= b.transpose() * dp.rows(6 * i, 6);
                }
                Some(c_inv * r)
            })
            .collect();
        let poses = (0..self.pose_hessian.len()).map(|i| dp.fixed_rows::<6>(6 * i).into_owned()).collect();
        Ok(Step { poses, landmarks })
    }

    /// Reference solve of the full damped system with one dense Cholesky.
    /// Every landmark block must be positive definite.
    pub fn solve_dense(&self, lambda: f64) -> Result<Step, NotPositiveDefinite> {
        let np = self.pose_dim();
        let offsets: Vec<usize> = self
            .landmarks
            .iter()
            .scan(np, |acc, lm| {
                let o = *acc;
                *acc += lm.gradient.len();
                Some(o)
            })
            .collect();
        let n = np + self.landmarks.iter().map(|l| l.gradient.len()).sum::<usize>();
        let mut h = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        for i in 0..self.pose_hessian.len() {
            h.fixed_view_mut::<6, 6>(6 * i, 6 * i).copy_from(&self.pose_hessian[i]);
            g.fixed_rows_mut::<6>(6 * i).copy_from(&self.pose_gradient[i]);
        }
        for (lm, &o) in self.landmarks.iter().zip(&offsets) {
            let k = lm.gradient.len();
            h.view_mut((o, o), (k, k)).copy_from(&lm.hessian);
            g.rows_mut(o, k).copy_from(&lm.gradient);
            for (i, b) in &lm.links {
                let mut v = h.view_mut((6 * i, o), (6, k));
                v += b;
                let mut v = h.view_mut((o, 6 * i), (k, 6));
                v += b.transpose();
            }
        }
        damp(&mut h, lambda);
        let x = h.cholesky().ok_or(NotPositiveDefinite)?.solve(&(-g));
        Ok(Step {
            poses: (0..self.pose_hessian.len()).map(|i| x.fixed_rows::<6>(6 * i).into_owned()).collect(),
            landmarks: self
                .landmarks
                .iter()
                .zip(&offsets)
                .map(|(lm, &o)| Some(x.rows(o, lm.gradient.len()).into_owned()))
                .collect(),
        })
    }
}
