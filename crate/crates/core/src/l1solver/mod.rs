//! Weighted ℓ1 recovery kernels.
//!
//! [`solve_bpdn`] minimizes `Σ_{i∉E} |s_i|` subject to `‖A·s − b‖² ≤ eps`,
//! where `E` is an optional set of unpenalized columns. [`solve_bp_eq`] is the
//! equality-constrained special case. Both reduce the problem to one with
//! full-row-rank measurements (see `reduce`) and then run either a
//! primal-dual interior-point method (equality) or a log-barrier method
//! (quadratic constraint).

mod barrier;
mod primal_dual;
mod reduce;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_norm_lstsq, select_columns};

use reduce::Reduction;

#[derive(Debug, Clone, PartialEq)]
pub struct L1Problem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Budget on the squared residual norm.
    pub eps: f64,
    /// Columns with zero ℓ1 weight.
    pub excluded: Vec<usize>,
}

impl L1Problem {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>, eps: f64) -> Self {
        L1Problem {
            a,
            b,
            eps,
            excluded: Vec::new(),
        }
    }

    pub fn with_excluded(mut self, excluded: Vec<usize>) -> Self {
        self.excluded = excluded;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.a.nrows() != self.b.len() {
            return Err(Error::Dimension(format!(
                "A has {} rows but b has length {}",
                self.a.nrows(),
                self.b.len()
            )));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eps must be finite and >= 0, got {}", self.eps)));
        }
        let q = self.a.ncols();
        if let Some(&i) = self.excluded.iter().find(|&&i| i >= q) {
            return Err(Error::Dimension(format!("excluded index {i} out of range for {q} columns")));
        }
        if self.a.iter().chain(self.b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("problem data must be finite".into()));
        }
        Ok(())
    }

    /// `Σ_{i∉E} |s_i|`.
    pub fn objective(&self, s: &DVector<f64>) -> f64 {
        let mut skip = vec![false; s.len()];
        for &i in &self.excluded {
            skip[i] = true;
        }
        s.iter().zip(&skip).filter(|(_, &k)| !k).map(|(v, _)| v.abs()).sum()
    }

    pub fn residual_sq(&self, s: &DVector<f64>) -> f64 {
        (&self.a * s - &self.b).norm_squared()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverTolerances {
    /// Absolute slack allowed on the squared residual.
    pub feasibility_tol: f64,
    /// Relative accuracy of the objective.
    pub optimality_tol: f64,
    pub max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        SolverTolerances {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-5,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub solution: DVector<f64>,
    pub objective: f64,
    pub residual_sq: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Inner iterate returned by the interior-point kernels.
pub(crate) struct InnerResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `min Σ_{i∉E} |s_i|  s.t.  ‖A·s − b‖² ≤ eps`.
///
/// Returns [`Error::Infeasible`] when no `s` meets the budget. A run that hits
/// the iteration cap still returns its last iterate with `converged = false`.
pub fn solve_bpdn(prob: &L1Problem, tol: &SolverTolerances) -> Result<SolverReport> {
    prob.validate()?;
    solve(prob, tol)
}

/// `min ‖u‖₁  s.t.  A·u = b`.
pub fn solve_bp_eq(a: &DMatrix<f64>, b: &DVector<f64>, tol: &SolverTolerances) -> Result<SolverReport> {
    let prob = L1Problem::new(a.clone(), b.clone(), 0.0);
    prob.validate()?;
    solve(&prob, tol)
}

fn solve(prob: &L1Problem, tol: &SolverTolerances) -> Result<SolverReport> {
    let q = prob.a.ncols();
    if prob.b.norm_squared() <= prob.eps || prob.b.iter().all(|&v| v == 0.0) {
        return Ok(finish(prob, DVector::zeros(q), 0, true));
    }

    let red = Reduction::new(prob);
    let spec = red.spectral();
    let budget = prob.eps - spec.b_perp_sq;
    let slack = prob.eps + tol.feasibility_tol;
    if spec.b_perp_sq > slack {
        return Err(Error::Infeasible {
            min_residual_sq: spec.b_perp_sq,
            eps: prob.eps,
        });
    }
    // Unpenalized columns can absorb everything they reach, so the reduced
    // right-hand side may already be within budget or at rounding level.
    let c_sq = spec.c.norm_squared();
    let negligible = c_sq.sqrt() <= 1e-12 * prob.b.norm();
    let (x_kept, iterations, converged) = if negligible || c_sq <= budget {
        (DVector::zeros(red.kept.len()), 0, true)
    } else if prob.eps == 0.0 || budget <= 1e-14 * c_sq {
        let r = primal_dual::solve(&spec, tol);
        (r.x, r.iterations, r.converged)
    } else {
        let r = barrier::solve(&spec, budget, tol);
        (r.x, r.iterations, r.converged)
    };
    let s = red.lift(prob, &x_kept);
    let mut report = finish(prob, s, iterations, converged);
    if report.residual_sq > prob.eps + tol.feasibility_tol {
        report.converged = false;
    }
    Ok(report)
}

fn finish(prob: &L1Problem, s: DVector<f64>, iterations: usize, converged: bool) -> SolverReport {
    SolverReport {
        objective: prob.objective(&s),
        residual_sq: prob.residual_sq(&s),
        solution: s,
        iterations,
        converged,
    }
}

/// Minimum-norm least squares restricted to the columns `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct RestrictedLs {
    /// Zero outside `T`.
    pub solution: DVector<f64>,
    /// 2-norm condition number of `A_T` (infinite when rank deficient).
    pub condition: f64,
}

impl RestrictedLs {
    pub fn ill_conditioned(&self) -> bool {
        self.condition > 1e8
    }
}

pub fn restricted_least_squares(a: &DMatrix<f64>, support: &[usize], b: &DVector<f64>) -> RestrictedLs {
    let mut solution = DVector::zeros(a.ncols());
    if support.is_empty() {
        return RestrictedLs { solution, condition: 1.0 };
    }
    let (w, condition) = min_norm_lstsq(&select_columns(a, support), b);
    for (k, &i) in support.iter().enumerate() {
        solution[i] = w[k];
    }
    RestrictedLs { solution, condition }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tol() -> SolverTolerances {
        SolverTolerances::default()
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = DMatrix::from_fn(4, 6, |r, c| (r + 2 * c) as f64);
        for eps in [0.0, 1.0] {
            let rep = solve_bpdn(&L1Problem::new(a.clone(), DVector::zeros(4), eps), &tol()).unwrap();
            assert_eq!(rep.solution, DVector::zeros(6));
            assert_eq!(rep.objective, 0.0);
        }
    }

    #[test]
    fn identity_sensing_recovers_spike() {
        let mut b = DVector::zeros(8);
        b[3] = 5.0;
        let rep = solve_bpdn(&L1Problem::new(DMatrix::identity(8, 8), b.clone(), 1e-12), &tol()).unwrap();
        assert!(rep.converged);
        assert!((rep.solution - b).amax() < 1e-5);
    }

    #[test]
    fn duplicated_columns_have_unit_objective() {
        let a = crate::linalg::hstack(&DMatrix::identity(3, 3), &DMatrix::identity(3, 3));
        let mut b = DVector::zeros(3);
        b[0] = 1.0;
        let rep = solve_bp_eq(&a, &b, &tol()).unwrap();
        assert!((rep.objective - 1.0).abs() < 1e-6);
        assert!(rep.residual_sq < 1e-8);
    }

    #[test]
    fn unreachable_rhs_is_infeasible() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        assert!(matches!(
            solve_bpdn(&L1Problem::new(a.clone(), b.clone(), 0.5), &tol()),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(solve_bp_eq(&a, &b, &tol()), Err(Error::Infeasible { .. })));
        let rep = solve_bpdn(&L1Problem::new(a, b, 2.5), &tol()).unwrap();
        assert!(rep.converged && rep.residual_sq <= 2.5 + 1e-8);
    }

    #[test]
    fn fully_excluded_problem_costs_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(5, 8, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
        let prob = L1Problem::new(a, b, 1e-6).with_excluded((0..8).collect());
        let rep = solve_bpdn(&prob, &tol()).unwrap();
        assert_eq!(rep.objective, 0.0);
        assert!(rep.residual_sq <= 1e-6 + 1e-8);
    }

    #[test]
    fn restricted_ls_examples() {
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let a = DMatrix::identity(5, 5);
        assert_eq!(restricted_least_squares(&a, &[], &b).solution, DVector::zeros(5));
        let v = restricted_least_squares(&a, &[1, 3], &b).solution;
        assert!((v - DVector::from_vec(vec![0.0, 2.0, 0.0, 4.0, 0.0])).amax() < 1e-12);
    }

    #[test]
    fn restricted_ls_flags_collinear_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 0.0, 0.0]);
        let r = restricted_least_squares(&a, &[0, 1], &DVector::from_vec(vec![1.0, 2.0, 0.0]));
        assert!(r.ill_conditioned());
        assert!((r.solution[0] - 0.5).abs() < 1e-12);
    }
}
