//! Log-barrier method for `min ‖x‖₁ s.t. ‖A·x − c‖² ≤ budget`.
//!
//! The barrier problem at weight `tau` is
//! `tau·Σu − Σ log(u − x) − Σ log(u + x) − log(−fe)` with
//! `fe = ½(‖A·x − c‖² − budget)`, solved by damped Newton steps. The
//! minimum-norm solution of `A·x = c` is strictly feasible and serves as the
//! starting point.

use nalgebra::{DMatrix, DVector};

use super::reduce::Spectral;
use super::{InnerResult, SolverTolerances};

const MU: f64 = 10.0;
const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;
const MAX_NEWTON: usize = 50;
const MAX_BACKTRACK: usize = 40;

struct Point {
    x: DVector<f64>,
    u: DVector<f64>,
    r: DVector<f64>,
}

fn barrier_value(p: &Point, tau: f64, budget: f64) -> f64 {
    let fe = 0.5 * (p.r.norm_squared() - budget);
    if fe >= 0.0 {
        return f64::INFINITY;
    }
    let mut f = tau * p.u.sum() - (-fe).ln();
    for i in 0..p.x.len() {
        let a = p.u[i] - p.x[i];
        let b = p.u[i] + p.x[i];
        if a <= 0.0 || b <= 0.0 {
            return f64::INFINITY;
        }
        f -= a.ln() + b.ln();
    }
    f
}

fn spd_solve(h: DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(rhs));
    }
    let ridge = 1e-14 * h.diagonal().amax();
    let mut hr = h;
    for i in 0..hr.nrows() {
        hr[(i, i)] += ridge;
    }
    hr.clone().cholesky().map(|ch| ch.solve(rhs)).or_else(|| hr.lu().solve(rhs))
}

pub(crate) fn solve(spec: &Spectral, budget: f64, tol: &SolverTolerances) -> InnerResult {
    let a = &spec.a2;
    let q = a.ncols();
    let ata = a.transpose() * a;
    let n_cons = (2 * q + 1) as f64;
    let rel_gap = 0.1 * tol.optimality_tol;

    let x = a.transpose() * spec.c.component_div(&spec.lam);
    let xmax = x.amax();
    let u = x.map(|v| 0.95 * v.abs() + 0.1 * xmax);
    let r = a * &x - &spec.c;
    let floor = 1e-12 * x.iter().map(|v| v.abs()).sum::<f64>();
    let mut p = Point { x, u, r };

    let mut tau = (n_cons / p.x.iter().map(|v| v.abs()).sum::<f64>()).max(1.0);
    let newton_tol = 1e-6 * n_cons;
    let mut iterations = 0;
    let mut converged = false;

    loop {
        for _ in 0..MAX_NEWTON {
            if iterations >= tol.max_iter {
                break;
            }
            iterations += 1;
            let fe = 0.5 * (p.r.norm_squared() - budget);
            let fu1 = &p.x - &p.u;
            let fu2 = -&p.x - &p.u;
            let atr = a.transpose() * &p.r;
            let ntgz = DVector::from_fn(q, |i, _| 1.0 / fu1[i] - 1.0 / fu2[i] + atr[i] / fe);
            let ntgu = DVector::from_fn(q, |i, _| -tau - 1.0 / fu1[i] - 1.0 / fu2[i]);
            let sig11 = DVector::from_fn(q, |i, _| 1.0 / (fu1[i] * fu1[i]) + 1.0 / (fu2[i] * fu2[i]));
            let sig12 = DVector::from_fn(q, |i, _| -1.0 / (fu1[i] * fu1[i]) + 1.0 / (fu2[i] * fu2[i]));
            let w1p = DVector::from_fn(q, |i, _| ntgz[i] - sig12[i] * ntgu[i] / sig11[i]);

            let mut h = &ata * (-1.0 / fe) + (&atr * atr.transpose()) * (1.0 / (fe * fe));
            for i in 0..q {
                h[(i, i)] += sig11[i] - sig12[i] * sig12[i] / sig11[i];
            }
            let Some(dx) = spd_solve(h, &w1p) else { break };
            let du = DVector::from_fn(q, |i, _| (ntgu[i] - sig12[i] * dx[i]) / sig11[i]);
            let adx = a * &dx;

            let mut smax: f64 = 1.0;
            for i in 0..q {
                let g1 = dx[i] - du[i];
                if g1 > 0.0 {
                    smax = smax.min(-fu1[i] / g1);
                }
                let g2 = -dx[i] - du[i];
                if g2 > 0.0 {
                    smax = smax.min(-fu2[i] / g2);
                }
            }
            let aq = adx.norm_squared();
            if aq > 0.0 {
                let bq = 2.0 * p.r.dot(&adx);
                let cq = p.r.norm_squared() - budget;
                let root = (-bq + (bq * bq - 4.0 * aq * cq).sqrt()) / (2.0 * aq);
                smax = smax.min(root);
            }
            let mut s = 0.99 * smax;

            let lambda2 = ntgz.dot(&dx) + ntgu.dot(&du);
            let f0 = barrier_value(&p, tau, budget);
            let mut next = None;
            for _ in 0..MAX_BACKTRACK {
                let cand = Point {
                    x: &p.x + s * &dx,
                    u: &p.u + s * &du,
                    r: &p.r + s * &adx,
                };
                if barrier_value(&cand, tau, budget) <= f0 - ALPHA * s * lambda2 {
                    next = Some(cand);
                    break;
                }
                s *= BETA;
            }
            match next {
                Some(cand) => p = cand,
                None => break,
            }
            if lambda2 / 2.0 < newton_tol {
                break;
            }
        }
        let l1 = p.x.iter().map(|v| v.abs()).sum::<f64>();
        if n_cons / tau <= rel_gap * l1.max(floor) {
            converged = true;
            break;
        }
        if iterations >= tol.max_iter {
            break;
        }
        tau *= MU;
    }
    InnerResult {
        x: p.x,
        iterations,
        converged,
    }
}
