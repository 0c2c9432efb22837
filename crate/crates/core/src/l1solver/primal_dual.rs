//! Primal-dual interior point for `min ‖x‖₁ s.t. C·x = d`.
//!
//! Works on the split form `min Σu` with `−u ≤ x ≤ u`. The rows of `C` are
//! whitened to be orthonormal, which keeps the Newton normal equations well
//! scaled.

use nalgebra::{DMatrix, DVector};

use super::reduce::Spectral;
use super::{InnerResult, SolverTolerances};

const MU: f64 = 10.0;
const ALPHA: f64 = 0.01;
const BETA: f64 = 0.5;
const MAX_BACKTRACK: usize = 32;

pub(crate) fn solve(spec: &Spectral, tol: &SolverTolerances) -> InnerResult {
    let (r, q) = spec.a2.shape();
    if r == 0 || spec.c.iter().all(|&v| v == 0.0) {
        return InnerResult {
            x: DVector::zeros(q),
            iterations: 0,
            converged: true,
        };
    }
    let scale = spec.lam.map(|l| 1.0 / l.sqrt());
    let c_mat = DMatrix::from_fn(r, q, |i, j| scale[i] * spec.a2[(i, j)]);
    let d = spec.c.component_mul(&scale);
    let rel_gap = 0.1 * tol.optimality_tol;

    let mut x = c_mat.transpose() * &d;
    let xmax = x.amax();
    let floor = 1e-12 * x.iter().map(|v| v.abs()).sum::<f64>();
    let mut u = x.map(|v| 0.95 * v.abs() + 0.1 * xmax);
    let mut fu1 = &x - &u;
    let mut fu2 = -&x - &u;
    let mut lam1 = fu1.map(|v| -1.0 / v);
    let mut lam2 = fu2.map(|v| -1.0 / v);
    let mut ctv = -(c_mat.transpose() * (&c_mat * (&lam1 - &lam2)));
    let mut rpri = &c_mat * &x - &d;

    let mut sdg = -(fu1.dot(&lam1) + fu2.dot(&lam2));
    let mut tau = MU * 2.0 * q as f64 / sdg;
    let residual_norm = |lam1: &DVector<f64>,
                         lam2: &DVector<f64>,
                         fu1: &DVector<f64>,
                         fu2: &DVector<f64>,
                         ctv: &DVector<f64>,
                         rpri: &DVector<f64>,
                         tau: f64| {
        let mut acc = 0.0;
        for i in 0..q {
            let rd1 = lam1[i] - lam2[i] + ctv[i];
            let rd2 = 1.0 - lam1[i] - lam2[i];
            let rc1 = -lam1[i] * fu1[i] - 1.0 / tau;
            let rc2 = -lam2[i] * fu2[i] - 1.0 / tau;
            acc += rd1 * rd1 + rd2 * rd2 + rc1 * rc1 + rc2 * rc2;
        }
        (acc + rpri.norm_squared()).sqrt()
    };
    let mut resnorm = residual_norm(&lam1, &lam2, &fu1, &fu2, &ctv, &rpri, tau);

    let mut iterations = 0;
    let mut converged = false;
    while iterations < tol.max_iter {
        let scale_x = x.iter().map(|v| v.abs()).sum::<f64>().max(floor);
        let dual_res = (0..q)
            .map(|i| (lam1[i] - lam2[i] + ctv[i]).abs().max((1.0 - lam1[i] - lam2[i]).abs()))
            .fold(0.0, f64::max);
        if sdg <= rel_gap * scale_x && rpri.amax() <= 1e-10 * d.amax().max(1.0) && dual_res <= 1e-7 {
            converged = true;
            break;
        }
        iterations += 1;

        let w1 = DVector::from_fn(q, |i, _| -(1.0 / tau) * (-1.0 / fu1[i] + 1.0 / fu2[i]) - ctv[i]);
        let w2 = DVector::from_fn(q, |i, _| -1.0 - (1.0 / tau) * (1.0 / fu1[i] + 1.0 / fu2[i]));
        let sig1 = DVector::from_fn(q, |i, _| -lam1[i] / fu1[i] - lam2[i] / fu2[i]);
        let sig2 = DVector::from_fn(q, |i, _| lam1[i] / fu1[i] - lam2[i] / fu2[i]);
        let sigx = DVector::from_fn(q, |i, _| sig1[i] - sig2[i] * sig2[i] / sig1[i]);

        let t = DVector::from_fn(q, |i, _| w1[i] / sigx[i] - w2[i] * sig2[i] / (sigx[i] * sig1[i]));
        let w1p = rpri.clone() + &c_mat * t;
        let scaled = DMatrix::from_fn(r, q, |i, j| c_mat[(i, j)] / sigx[j]);
        let h11p = &scaled * c_mat.transpose();
        let dv = match h11p.clone().cholesky() {
            Some(ch) => ch.solve(&w1p),
            None => match h11p.lu().solve(&w1p) {
                Some(s) => s,
                None => break,
            },
        };
        let ctdv = c_mat.transpose() * &dv;
        let dx = DVector::from_fn(q, |i, _| (w1[i] - w2[i] * sig2[i] / sig1[i] - ctdv[i]) / sigx[i]);
        let cdx = &c_mat * &dx;
        let du = DVector::from_fn(q, |i, _| (w2[i] - sig2[i] * dx[i]) / sig1[i]);
        let dlam1 = DVector::from_fn(q, |i, _| {
            (lam1[i] / fu1[i]) * (-dx[i] + du[i]) - lam1[i] - (1.0 / tau) / fu1[i]
        });
        let dlam2 = DVector::from_fn(q, |i, _| {
            (lam2[i] / fu2[i]) * (dx[i] + du[i]) - lam2[i] - (1.0 / tau) / fu2[i]
        });

        let mut s: f64 = 1.0;
        for i in 0..q {
            if dlam1[i] < 0.0 {
                s = s.min(-lam1[i] / dlam1[i]);
            }
            if dlam2[i] < 0.0 {
                s = s.min(-lam2[i] / dlam2[i]);
            }
            let g1 = dx[i] - du[i];
            if g1 > 0.0 {
                s = s.min(-fu1[i] / g1);
            }
            let g2 = -dx[i] - du[i];
            if g2 > 0.0 {
                s = s.min(-fu2[i] / g2);
            }
        }
        s *= 0.99;

        let mut accepted = false;
        for _ in 0..MAX_BACKTRACK {
            let xp = &x + s * &dx;
            let up = &u + s * &du;
            let ctvp = &ctv + s * &ctdv;
            let lam1p = &lam1 + s * &dlam1;
            let lam2p = &lam2 + s * &dlam2;
            let fu1p = &xp - &up;
            let fu2p = -&xp - &up;
            let rpp = &rpri + s * &cdx;
            let rn = residual_norm(&lam1p, &lam2p, &fu1p, &fu2p, &ctvp, &rpp, tau);
            if rn <= (1.0 - ALPHA * s) * resnorm {
                x = xp;
                u = up;
                ctv = ctvp;
                lam1 = lam1p;
                lam2 = lam2p;
                fu1 = fu1p;
                fu2 = fu2p;
                rpri = rpp;
                accepted = true;
                break;
            }
            s *= BETA;
        }
        if !accepted {
            break;
        }
        sdg = -(fu1.dot(&lam1) + fu2.dot(&lam2));
        tau = MU * 2.0 * q as f64 / sdg;
        resnorm = residual_norm(&lam1, &lam2, &fu1, &fu2, &ctv, &rpri, tau);
    }
    if !converged {
        let scale_x = x.iter().map(|v| v.abs()).sum::<f64>().max(floor);
        converged = sdg <= 10.0 * rel_gap * scale_x;
    }
    InnerResult {
        x,
        iterations,
        converged,
    }
}
