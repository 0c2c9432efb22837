//! Problem reduction shared by both kernels.
//!
//! Unpenalized columns are eliminated by projecting onto the orthogonal
//! complement of their range; their values are recovered by least squares at
//! the end. The remaining measurements are rotated onto the row space of the
//! reduced matrix, which separates out the part of `b` no solution can reach.

use nalgebra::{DMatrix, DVector};

use super::L1Problem;
use crate::linalg::{householder_complement, min_norm_lstsq, select_columns};

pub(crate) struct Reduction {
    pub kept: Vec<usize>,
    excluded: Vec<usize>,
    a_excluded: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

/// Reduced problem in row-space coordinates: `‖A·x − b‖² = ‖a2·x − c‖² + b_perp_sq`.
pub(crate) struct Spectral {
    pub a2: DMatrix<f64>,
    pub c: DVector<f64>,
    /// Squared singular values; `a2` has orthogonal rows with these norms².
    pub lam: DVector<f64>,
    pub b_perp_sq: f64,
}

fn numerical_rank(sv: &DVector<f64>, dims: (usize, usize)) -> usize {
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * (dims.0.max(dims.1) as f64) * 16.0 * f64::EPSILON;
    sv.iter().filter(|&&s| s > tol && s > 0.0).count()
}

/// Left singular vectors and singular values, sorted by decreasing value.
fn sorted_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let k = svd.singular_values.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let u = DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]);
    let v_t = DMatrix::from_fn(k, v_t.ncols(), |r, c| v_t[(order[r], c)]);
    let sv = DVector::from_fn(k, |i, _| svd.singular_values[order[i]]);
    (u, sv, v_t)
}

impl Reduction {
    pub fn new(prob: &L1Problem) -> Self {
        let q = prob.a.ncols();
        let mut excluded = prob.excluded.clone();
        excluded.sort_unstable();
        excluded.dedup();
        let mut is_excluded = vec![false; q];
        for &i in &excluded {
            is_excluded[i] = true;
        }
        let kept: Vec<usize> = (0..q).filter(|&i| !is_excluded[i]).collect();
        let a_kept = select_columns(&prob.a, &kept);
        if excluded.is_empty() {
            return Reduction {
                kept,
                excluded,
                a_excluded: DMatrix::zeros(prob.a.nrows(), 0),
                a: a_kept,
                b: prob.b.clone(),
            };
        }

        let n = prob.a.nrows();
        let a_excluded = select_columns(&prob.a, &excluded);
        let (u, sv, _) = sorted_svd(&a_excluded);
        let rank = numerical_rank(&sv, a_excluded.shape());
        let (a, b) = if rank == 0 {
            (a_kept, prob.b.clone())
        } else if rank >= n {
            (DMatrix::zeros(0, kept.len()), DVector::zeros(0))
        } else {
            let z = householder_complement(&u.columns(0, rank).clone_owned());
            (z.transpose() * &a_kept, z.transpose() * &prob.b)
        };
        Reduction {
            kept,
            excluded,
            a_excluded,
            a,
            b,
        }
    }

    pub fn spectral(&self) -> Spectral {
        let (n, q) = self.a.shape();
        if n == 0 || q == 0 {
            return Spectral {
                a2: DMatrix::zeros(0, q),
                c: DVector::zeros(0),
                lam: DVector::zeros(0),
                b_perp_sq: self.b.norm_squared(),
            };
        }
        let (u, sv, v_t) = sorted_svd(&self.a);
        let r = numerical_rank(&sv, (n, q));
        let ur = u.columns(0, r);
        let c = ur.transpose() * &self.b;
        let b_perp_sq = (&self.b - &ur * &c).norm_squared();
        let a2 = DMatrix::from_fn(r, q, |i, j| sv[i] * v_t[(i, j)]);
        let lam = DVector::from_fn(r, |i, _| sv[i] * sv[i]);
        Spectral { a2, c, lam, b_perp_sq }
    }

    /// Full-length solution from the reduced iterate.
    pub fn lift(&self, prob: &L1Problem, x_kept: &DVector<f64>) -> DVector<f64> {
        let mut s = DVector::zeros(prob.a.ncols());
        for (k, &i) in self.kept.iter().enumerate() {
            s[i] = x_kept[k];
        }
        if !self.excluded.is_empty() {
            let rhs = &prob.b - &prob.a * &s;
            let (xe, _) = min_norm_lstsq(&self.a_excluded, &rhs);
            for (k, &i) in self.excluded.iter().enumerate() {
                s[i] = xe[k];
            }
        }
        s
    }
}
