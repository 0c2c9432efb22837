//! Linear-programming reference for the ℓ1 kernels.
//!
//! Penalized entries are split into nonnegative parts, unpenalized entries are
//! free variables with zero cost, and the problem goes to a simplex solver.
//! Equality constraints are passed through directly. A quadratic budget is
//! handled with outer cutting planes. Each LP solution gives a lower bound and
//! is mapped to feasible points (on the segment to the least-squares point,
//! pulled back along the minimum-norm correction, or with the unpenalized
//! entries refit), which give upper bounds. Supporting cuts are added at the
//! LP solution and at the boundary points until the two bounds agree.

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution, Variable};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::l1solver::L1Problem;
use crate::linalg::{min_norm_lstsq, select_columns};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub objective: f64,
    pub solution: DVector<f64>,
    /// Gap between the best feasible point and the LP lower bound.
    pub bound_gap: f64,
    pub cuts: usize,
}

const MAX_CUTS: usize = 2000;
const REL_GAP: f64 = 1e-9;

enum Column {
    Split(Variable, Variable),
    Free(Variable),
}

struct Lp {
    columns: Vec<Column>,
}

impl Lp {
    fn build(prob: &L1Problem) -> (Problem, Lp) {
        let q = prob.a.ncols();
        let mut free = vec![false; q];
        for &i in &prob.excluded {
            free[i] = true;
        }
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let columns = (0..q)
            .map(|i| {
                if free[i] {
                    Column::Free(lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
                } else {
                    Column::Split(lp.add_var(1.0, (0.0, f64::INFINITY)), lp.add_var(1.0, (0.0, f64::INFINITY)))
                }
            })
            .collect();
        (lp, Lp { columns })
    }

    /// Linear expression for `Σ coef_i · x_i`.
    fn expr(&self, coef: impl Iterator<Item = f64>) -> Vec<(Variable, f64)> {
        let mut out = Vec::new();
        for (col, c) in self.columns.iter().zip(coef) {
            if c == 0.0 {
                continue;
            }
            match *col {
                Column::Split(p, n) => {
                    out.push((p, c));
                    out.push((n, -c));
                }
                Column::Free(z) => out.push((z, c)),
            }
        }
        out
    }

    fn point(&self, sol: &Solution) -> DVector<f64> {
        DVector::from_iterator(
            self.columns.len(),
            self.columns.iter().map(|col| match *col {
                Column::Split(p, n) => sol.var_value(p) - sol.var_value(n),
                Column::Free(z) => sol.var_value(z),
            }),
        )
    }
}

fn lp_error(e: microlp::Error) -> Error {
    match e {
        microlp::Error::Infeasible => Error::Infeasible {
            min_residual_sq: f64::NAN,
            eps: 0.0,
        },
        other => Error::Format(format!("lp solver: {other}")),
    }
}

/// Optimal weighted ℓ1 objective of `prob`, computed by linear programming.
pub fn lp_oracle(prob: &L1Problem) -> Result<OracleResult> {
    if prob.eps == 0.0 {
        equality(prob)
    } else {
        budgeted(prob)
    }
}

fn equality(prob: &L1Problem) -> Result<OracleResult> {
    let (mut lp, map) = Lp::build(prob);
    for j in 0..prob.a.nrows() {
        let row = map.expr(prob.a.row(j).iter().copied());
        lp.add_constraint(row, ComparisonOp::Eq, prob.b[j]);
    }
    let sol = lp.solve().map_err(lp_error)?.into_solution().map_err(|_| Error::Format("lp interrupted".into()))?;
    let x = map.point(&sol);
    Ok(OracleResult {
        objective: prob.objective(&x),
        solution: x,
        bound_gap: 0.0,
        cuts: 0,
    })
}

fn budgeted(prob: &L1Problem) -> Result<OracleResult> {
    let a = &prob.a;
    let b = &prob.b;
    let eps = prob.eps;
    let g = |x: &DVector<f64>| (a * x - b).norm_squared();

    let (x_ls, _) = min_norm_lstsq(a, b);
    let g_ls = g(&x_ls);
    if g_ls > eps {
        return Err(Error::Infeasible {
            min_residual_sq: g_ls,
            eps,
        });
    }

    let pinv = a.clone().pseudo_inverse(1e-12 * a.amax().max(1.0)).map_err(|e| Error::Format(e.to_string()))?;
    let a_free = select_columns(a, &prob.excluded);
    let (lp, map) = Lp::build(prob);
    let mut sol = lp.solve().map_err(lp_error)?.into_solution().map_err(|_| Error::Format("lp interrupted".into()))?;
    let mut best = x_ls.clone();
    let mut upper = prob.objective(&x_ls);
    let mut cuts = 0;
    let mut lower;
    loop {
        let xbar = map.point(&sol);
        lower = sol.objective();
        let gbar = g(&xbar);
        if gbar <= eps {
            best = xbar;
            upper = prob.objective(&best);
            break;
        }
        // Feasible candidates: the boundary point on the segment from x_ls,
        // and xbar pulled back along the minimum-norm correction.
        let dir = &xbar - &x_ls;
        let adir = a * &dir;
        let r0 = a * &x_ls - b;
        let qa = adir.norm_squared();
        let qb = 2.0 * r0.dot(&adir);
        let qc = g_ls - eps;
        let theta = ((-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa)).clamp(0.0, 1.0);
        let mut candidates = vec![&x_ls + theta * &dir];
        let rbar = a * &xbar - b;
        let delta = &pinv * &rbar;
        let r_in = a * &delta;
        let out_sq = (&rbar - &r_in).norm_squared();
        let in_sq = r_in.norm_squared();
        if out_sq < eps && in_sq > 0.0 {
            let k = (1.0 - ((eps - out_sq) / in_sq).sqrt()).clamp(0.0, 1.0);
            candidates.push(&xbar - k * &delta);
        }
        if !prob.excluded.is_empty() {
            let mut x = xbar.clone();
            for &i in &prob.excluded {
                x[i] = 0.0;
            }
            let (z, _) = min_norm_lstsq(&a_free, &(b - a * &x));
            for (k, &i) in prob.excluded.iter().enumerate() {
                x[i] = z[k];
            }
            candidates.push(x);
        }
        let mut boundary = Vec::new();
        for x in candidates {
            if g(&x) <= eps * (1.0 + 1e-12) {
                let o = prob.objective(&x);
                if o < upper {
                    upper = o;
                    best = x.clone();
                }
                boundary.push(x);
            }
        }
        if upper - lower <= REL_GAP * upper.max(f64::MIN_POSITIVE) || cuts >= MAX_CUTS {
            break;
        }
        // g(y) + ∇g(y)ᵀ(x − y) ≤ eps, with ∇g(y) = 2Aᵀ(Ay − b).
        for y in std::iter::once(&xbar).chain(boundary.iter()) {
            let resid = a * y - b;
            let grad = a.transpose() * &resid * 2.0;
            let rhs = eps - resid.norm_squared() + grad.dot(y);
            let row = map.expr(grad.iter().copied());
            cuts += 1;
            sol = sol
                .add_constraint(row, ComparisonOp::Le, rhs)
                .map_err(lp_error)?
                .into_solution()
                .map_err(|_| Error::Format("lp interrupted".into()))?;
        }
    }
    Ok(OracleResult {
        objective: upper,
        solution: best,
        bound_gap: (upper - lower).max(0.0),
        cuts,
    })
}

/// Helper for callers building random instances: Gaussian columns scaled to unit norm.
pub fn normalize_columns(a: &mut DMatrix<f64>) {
    for mut col in a.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 {
            col /= n;
        }
    }
}
