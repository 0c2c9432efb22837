//! Per-frame recovery of the sparse part.
//!
//! Every method follows the same outline: advance the subspace estimate, pose
//! an ℓ1 problem in the current complement, keep the entries above `gamma`,
//! refit them by least squares, and take the background as what is left.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1solver::{restricted_least_squares, solve_bp_eq, solve_bpdn, L1Problem, SolverReport, SolverTolerances};
use crate::linalg::hstack;
use crate::subspace::{orth_complement, train_initial, Status, SubspaceEstimate, SubspaceParams, UpdateEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Noise-canceled recovery (differences against `f·L̂_{t−1}`).
    #[serde(rename = "nc")]
    NoiseCanceled,
    #[serde(rename = "basic")]
    Basic,
    /// Noise-canceled recovery with a known part of the support left unpenalized.
    #[serde(rename = "modcs")]
    ModCs,
    /// Equality-constrained ℓ1 over `[P̂ P̂⊥ I]`.
    #[serde(rename = "pj")]
    Pj,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::NoiseCanceled => "nc",
            Method::Basic => "basic",
            Method::ModCs => "modcs",
            Method::Pj => "pj",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "nc" => Some(Method::NoiseCanceled),
            "basic" => Some(Method::Basic),
            "modcs" => Some(Method::ModCs),
            "pj" => Some(Method::Pj),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsRule {
    /// `‖β̂_{t−1} − f·β̂_{t−2}‖²`.
    NoiseCanceled,
    /// `‖β̂_{t−1}‖²`.
    Basic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerParams {
    pub f: f64,
    pub gamma: f64,
    /// Overrides the method's own rule when set.
    pub eps_rule: Option<EpsRule>,
    /// Multiplier applied to the rule's energy.
    pub eps_factor: f64,
    pub eps_floor: f64,
    pub subspace: SubspaceParams,
    pub tolerances: SolverTolerances,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            f: 0.9,
            gamma: 2.5,
            eps_rule: None,
            eps_factor: 2.0,
            eps_floor: 1e-6 * 128.0,
            subspace: SubspaceParams::default(),
            tolerances: SolverTolerances::default(),
        }
    }
}

impl TrackerParams {
    /// Defaults for `m`-pixel frames.
    pub fn for_dim(m: usize) -> Self {
        TrackerParams {
            eps_floor: 1e-6 * m as f64,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) {
            return Err(Error::InvalidConfig("gamma must be positive".into()));
        }
        if !(self.eps_floor > 0.0) {
            return Err(Error::InvalidConfig("eps_floor must be positive".into()));
        }
        if !(self.eps_factor >= 0.0 && self.eps_factor.is_finite()) {
            return Err(Error::InvalidConfig("eps_factor must be finite and >= 0".into()));
        }
        self.subspace.validate()
    }

    fn eps_rule_for(&self, method: Method) -> EpsRule {
        self.eps_rule.unwrap_or(match method {
            Method::Basic => EpsRule::Basic,
            _ => EpsRule::NoiseCanceled,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrackerState {
    pub subspace: SubspaceEstimate,
    pub p_hat: DMatrix<f64>,
    pub p_perp: DMatrix<f64>,
    pub l_hat_prev: DVector<f64>,
    pub l_hat_prev2: DVector<f64>,
    /// `‖P̂_{t−1,⊥}ᵀ·L̂_{t−1}‖²`, the trigger statistic for the next frame.
    pub beta_prev_sq: f64,
    pub frames_seen: usize,
}

impl TrackerState {
    /// Trains on the sparse-free block `[L_1 … L_{t0}]` and seeds the
    /// background history with its last two frames.
    pub fn from_training(frames: &DMatrix<f64>, params: &TrackerParams) -> Result<Self> {
        let t0 = frames.ncols();
        let (p0, g0) = train_initial(frames, params.f, &params.subspace)?;
        let mut subspace = SubspaceEstimate::new(p0, g0);
        let p_hat = subspace.basis();
        let p_perp = orth_complement(&p_hat)?;
        if let crate::subspace::DetectionThreshold::RunningMedian { window, .. } = params.subspace.delta {
            let start = t0.saturating_sub(window);
            let energies: Vec<f64> = (start..t0)
                .map(|t| (p_perp.transpose() * frames.column(t)).norm_squared())
                .collect();
            subspace.seed_energies(energies, window);
        }
        let l_hat_prev = frames.column(t0 - 1).clone_owned();
        let beta_prev_sq = (p_perp.transpose() * &l_hat_prev).norm_squared();
        Ok(TrackerState {
            subspace,
            p_hat,
            p_perp,
            l_hat_prev,
            l_hat_prev2: frames.column(t0 - 2).clone_owned(),
            beta_prev_sq,
            frames_seen: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.p_hat.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub s_hat: DVector<f64>,
    pub l_hat: DVector<f64>,
    pub support: Vec<usize>,
    pub eps_used: f64,
    /// Squared residual of the raw ℓ1 solution in its own constraint.
    pub residual_sq: f64,
    pub solver: Option<SolverReport>,
    /// Solver failed or did not converge; `s_hat` is still usable.
    pub flagged: bool,
    /// The refit was underdetermined or ill-conditioned.
    pub ls_flagged: bool,
    /// `‖P̂_⊥ᵀ·L̂_t‖²`.
    pub beta_sq: f64,
    /// `‖P̂_⊥ᵀ(L̂_t − f·L̂_{t−1})‖²`.
    pub beta_resid_sq: f64,
    pub rank: usize,
    pub status: Status,
    pub events: Vec<UpdateEvent>,
}

/// Entries with `s_i ≥ gamma`.
pub fn threshold_support(s: &DVector<f64>, gamma: f64) -> Vec<usize> {
    (0..s.len()).filter(|&i| s[i] >= gamma).collect()
}

impl TrackerState {
    fn advance_subspace(&mut self, params: &TrackerParams) -> Result<Vec<UpdateEvent>> {
        let diff = &self.l_hat_prev - params.f * &self.l_hat_prev2;
        let events = self.subspace.update(&diff, self.beta_prev_sq, &params.subspace);
        if self.subspace.rank() != self.p_hat.ncols() || !events.is_empty() {
            let basis = self.subspace.basis();
            if basis != self.p_hat {
                self.p_perp = orth_complement(&basis)?;
                self.p_hat = basis;
            }
        }
        Ok(events)
    }

    fn eps(&self, rule: EpsRule, params: &TrackerParams) -> f64 {
        if self.frames_seen < 2 {
            return params.eps_floor;
        }
        let v = match rule {
            EpsRule::NoiseCanceled => &self.l_hat_prev - params.f * &self.l_hat_prev2,
            EpsRule::Basic => self.l_hat_prev.clone(),
        };
        (params.eps_factor * (self.p_perp.transpose() * v).norm_squared()).max(params.eps_floor)
    }

    /// Runs `method` on frame `m_t`. `t_pred` is only used by [`Method::ModCs`].
    pub fn step(&mut self, method: Method, m_t: &DVector<f64>, t_pred: &[usize], params: &TrackerParams) -> Result<StepOutput> {
        let m = m_t.len();
        if m != self.p_perp.nrows() {
            return Err(Error::Dimension(format!("frame has {m} entries, tracker expects {}", self.p_perp.nrows())));
        }
        let events = self.advance_subspace(params)?;
        let perp_t = self.p_perp.transpose();
        let y = &perp_t * m_t;
        let eps = match method {
            Method::Pj => 0.0,
            _ => self.eps(params.eps_rule_for(method), params),
        };
        let tol = &params.tolerances;

        let (solved, ls_rhs) = match method {
            Method::NoiseCanceled | Method::ModCs => {
                let b = &perp_t * (m_t - params.f * &self.l_hat_prev);
                let excluded = if method == Method::ModCs { t_pred.to_vec() } else { Vec::new() };
                let prob = L1Problem::new(perp_t.clone(), b.clone(), eps).with_excluded(excluded);
                (solve_bpdn(&prob, tol), b)
            }
            Method::Basic => {
                let prob = L1Problem::new(perp_t.clone(), y.clone(), eps);
                (solve_bpdn(&prob, tol), y.clone())
            }
            Method::Pj => {
                let a = hstack(&hstack(&self.p_hat, &self.p_perp), &DMatrix::identity(m, m));
                let solved = solve_bp_eq(&a, m_t, tol).map(|mut rep| {
                    rep.solution = rep.solution.rows(m, m).clone_owned();
                    rep
                });
                (solved, y.clone())
            }
        };
        let (s_raw, residual_sq, flagged, solver) = match solved {
            Ok(rep) => (rep.solution.clone(), rep.residual_sq, !rep.converged, Some(rep)),
            Err(_) => (DVector::zeros(m), f64::NAN, true, None),
        };

        let support = threshold_support(&s_raw, params.gamma);
        let ls = restricted_least_squares(&perp_t, &support, &ls_rhs);
        let ls_flagged = support.len() > perp_t.nrows() || ls.ill_conditioned();
        let s_hat = ls.solution;
        let l_hat = m_t - &s_hat;

        let beta_sq = (&perp_t * &l_hat).norm_squared();
        let beta_resid_sq = (&perp_t * (&l_hat - params.f * &self.l_hat_prev)).norm_squared();
        self.l_hat_prev2 = std::mem::replace(&mut self.l_hat_prev, l_hat.clone());
        self.beta_prev_sq = beta_sq;
        self.frames_seen += 1;

        Ok(StepOutput {
            s_hat,
            l_hat,
            support,
            eps_used: eps,
            residual_sq,
            solver,
            flagged,
            ls_flagged,
            beta_sq,
            beta_resid_sq,
            rank: self.p_hat.ncols(),
            status: self.subspace.status,
            events,
        })
    }

    pub fn step_noise_canceled(&mut self, m_t: &DVector<f64>, params: &TrackerParams) -> Result<StepOutput> {
        self.step(Method::NoiseCanceled, m_t, &[], params)
    }

    pub fn step_basic(&mut self, m_t: &DVector<f64>, params: &TrackerParams) -> Result<StepOutput> {
        self.step(Method::Basic, m_t, &[], params)
    }

    pub fn step_modcs(&mut self, m_t: &DVector<f64>, t_pred: &[usize], params: &TrackerParams) -> Result<StepOutput> {
        self.step(Method::ModCs, m_t, t_pred, params)
    }

    pub fn step_pj(&mut self, m_t: &DVector<f64>, params: &TrackerParams) -> Result<StepOutput> {
        self.step(Method::Pj, m_t, &[], params)
    }
}

/// Expected `‖β_t‖²` and `‖β_t − f·β_{t−1}‖²` for directions entering `dt`
/// frames ago, given per-direction couplings `b_diag` into the complement.
pub fn expected_noise_energy(b_diag: &[f64], sigma_sq: &[f64], theta: f64, f: f64, dt: usize) -> (f64, f64) {
    let coupled: f64 = b_diag.iter().zip(sigma_sq).map(|(b, s)| b * s).sum();
    let growth = 1.0 - (1.0 - theta) * f.powi(2 * dt as i32);
    (growth * coupled, (1.0 - f * f) * coupled)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_energy_values() {
        let (a, b) = expected_noise_energy(&[1.0], &[1.0], 0.4, 0.9, 1);
        assert!((a - 0.514).abs() < 1e-12);
        assert!((b - 0.19).abs() < 1e-12);
        assert_eq!(expected_noise_energy(&[0.0, 0.0], &[3.0, 4.0], 0.4, 0.9, 3), (0.0, 0.0));
        let (a, b) = expected_noise_energy(&[0.5], &[2.0], 0.4, 0.9, 400);
        assert!((a - 1.0).abs() < 1e-12);
        assert!((a / b - 1.0 / 0.19).abs() < 1e-9);
    }

    #[test]
    fn threshold_is_signed() {
        let s = DVector::from_vec(vec![3.0, -4.0, 2.5, 2.4]);
        assert_eq!(threshold_support(&s, 2.5), vec![0, 2]);
    }

    #[test]
    fn method_names_round_trip() {
        for m in [Method::NoiseCanceled, Method::Basic, Method::ModCs, Method::Pj] {
            assert_eq!(Method::parse(m.as_str()), Some(m));
        }
        assert_eq!(Method::parse("x"), None);
    }
}
