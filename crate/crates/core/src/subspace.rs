//! Principal-subspace estimation and the add/rotate/delete state machine.
//!
//! All variances are kept in the difference domain, i.e. they describe
//! `L_t − f·L_{t−1}`, which is what training, detection, rotation and deletion
//! all consume.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hstack, householder_complement, orthonormality_error, orthonormalize, select_columns, sym_eig_desc};

/// Rule for the trigger threshold on `‖β̂_{t−1}‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DetectionThreshold {
    Fixed { value: f64 },
    /// `factor × median` of the last `window` energies seen while stable.
    RunningMedian { factor: f64, window: usize, floor: f64 },
}

impl Default for DetectionThreshold {
    fn default() -> Self {
        DetectionThreshold::RunningMedian {
            factor: 3.0,
            window: 50,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubspaceParams {
    pub f: f64,
    pub delta: DetectionThreshold,
    pub tau_d: usize,
    pub tau_r: usize,
    pub tau_del: usize,
    pub xi_d: f64,
    pub xi_r: f64,
    pub identity_diag_min: f64,
    pub identity_offdiag_max: f64,
    pub delete_frac: f64,
    pub train_eig_frac: f64,
}

impl Default for SubspaceParams {
    fn default() -> Self {
        SubspaceParams {
            f: 0.9,
            delta: DetectionThreshold::default(),
            tau_d: 20,
            tau_r: 20,
            tau_del: 20,
            xi_d: 1e-4,
            xi_r: 1e-4,
            identity_diag_min: 0.9999,
            identity_offdiag_max: 0.01,
            delete_frac: 0.05,
            train_eig_frac: 1e-6,
        }
    }
}

impl SubspaceParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.tau_d == 0 || self.tau_r == 0 || self.tau_del == 0 {
            return bad("buffer lengths must be at least 1");
        }
        if !(self.xi_d > 0.0 && self.xi_r > 0.0 && self.train_eig_frac > 0.0) {
            return bad("eigenvalue thresholds must be positive");
        }
        if !(self.identity_diag_min > 0.0 && self.identity_offdiag_max > 0.0) {
            return bad("identity thresholds must be positive");
        }
        if !(self.delete_frac > 0.0 && self.delete_frac < 1.0) {
            return bad("delete_frac must lie in (0, 1)");
        }
        match self.delta {
            DetectionThreshold::Fixed { value } if !(value > 0.0) => bad("delta must be positive"),
            DetectionThreshold::RunningMedian { factor, window, floor }
                if !(factor > 0.0 && floor > 0.0) || window == 0 =>
            {
                bad("running-median threshold needs positive factor, floor and window")
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Stable,
    Detection,
    Rotation,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Stable => "stable",
            Status::Detection => "detection",
            Status::Rotation => "rotation",
        }
    }
}

/// What a single update did to the estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum UpdateEvent {
    Triggered,
    /// New candidate directions found (possibly none).
    Detected { count: usize },
    Rotated { count: usize },
    /// Candidate directions appended to the stable basis.
    Merged { directions: DMatrix<f64> },
    /// Stable directions dropped as decayed.
    Removed { directions: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub p_stable: DMatrix<f64>,
    pub g_stable: Vec<f64>,
    pub p_new: DMatrix<f64>,
    pub g_new: Vec<f64>,
    pub status: Status,
    pub d: Vec<DVector<f64>>,
    pub d_del: Vec<DVector<f64>>,
    pub l: usize,
    pub frame: usize,
    stable_energies: VecDeque<f64>,
}

impl SubspaceEstimate {
    pub fn new(p_stable: DMatrix<f64>, g_stable: Vec<f64>) -> Self {
        let m = p_stable.nrows();
        SubspaceEstimate {
            p_stable,
            g_stable,
            p_new: DMatrix::zeros(m, 0),
            g_new: Vec::new(),
            status: Status::Stable,
            d: Vec::new(),
            d_del: Vec::new(),
            l: 0,
            frame: 0,
            stable_energies: VecDeque::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.p_stable.nrows()
    }

    pub fn rank(&self) -> usize {
        self.p_stable.ncols() + self.p_new.ncols()
    }

    /// `P̂ = [P_stable P_new]`.
    pub fn basis(&self) -> DMatrix<f64> {
        hstack(&self.p_stable, &self.p_new)
    }

    /// Seeds the running-median history, e.g. with energies from training data.
    pub fn seed_energies<I: IntoIterator<Item = f64>>(&mut self, energies: I, window: usize) {
        for e in energies {
            self.push_energy(e, window);
        }
    }

    fn push_energy(&mut self, e: f64, window: usize) {
        self.stable_energies.push_back(e);
        while self.stable_energies.len() > window {
            self.stable_energies.pop_front();
        }
    }

    /// Current trigger threshold.
    pub fn delta(&self, params: &SubspaceParams) -> f64 {
        match params.delta {
            DetectionThreshold::Fixed { value } => value,
            DetectionThreshold::RunningMedian { factor, floor, .. } => {
                if self.stable_energies.is_empty() {
                    return floor;
                }
                let mut v: Vec<f64> = self.stable_energies.iter().copied().collect();
                v.sort_by(f64::total_cmp);
                let n = v.len();
                let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
                (factor * median).max(floor)
            }
        }
    }

    fn threshold_scale(&self) -> f64 {
        self.g_stable.iter().sum()
    }

    /// Starts a detection cycle when the last residual energy exceeds `delta`.
    pub fn detect_trigger(&mut self, diff: &DVector<f64>, beta_prev_sq: f64, delta: f64) -> bool {
        if self.status == Status::Stable && beta_prev_sq > delta {
            self.status = Status::Detection;
            self.d.clear();
            self.d.push(diff.clone());
            return true;
        }
        false
    }

    /// Estimates directions of the buffered differences outside `P_stable`.
    pub fn detect_new_directions(&mut self, params: &SubspaceParams) -> usize {
        let tau = self.d.len().max(1) as f64;
        let m = self.dim();
        let mut k = DMatrix::from_columns(&self.d);
        let proj = self.p_stable.transpose() * &k;
        k -= &self.p_stable * proj;
        self.d.clear();

        // Eigenpairs of K·Kᵀ/τ through the small Gram matrix Kᵀ·K/τ.
        let (vals, vecs) = sym_eig_desc(&(k.transpose() * &k / tau));
        let cut = params.xi_d * self.threshold_scale();
        let room = (m - 1).saturating_sub(self.p_stable.ncols());
        let mut cols = Vec::new();
        let mut g = Vec::new();
        for (i, &mu) in vals.iter().enumerate() {
            if mu <= cut || mu <= 0.0 || cols.len() >= room {
                break;
            }
            let v = &k * vecs.column(i) / (tau * mu).sqrt();
            cols.push(v);
            g.push(mu);
        }
        if cols.is_empty() {
            self.p_new = DMatrix::zeros(m, 0);
            self.g_new.clear();
            self.status = Status::Stable;
            self.l = 0;
        } else {
            self.p_new = orthonormalize(&DMatrix::from_columns(&cols));
            self.g_new = g;
            self.status = Status::Rotation;
            self.l = params.tau_d;
        }
        self.g_new.len()
    }

    /// Re-estimates the candidate directions inside their own span, prunes the
    /// weak ones, and merges them into the stable basis once the rotation has
    /// settled. Returns the merged directions, if any.
    pub fn rotate_new_directions(&mut self, params: &SubspaceParams) -> Option<DMatrix<f64>> {
        let m = self.dim();
        let tau = self.d.len() as f64;
        let dmat = DMatrix::from_columns(&self.d);
        self.d.clear();
        let k = self.p_new.transpose() * &dmat;
        let l = self.l as f64;
        let mut acc = &k * k.transpose();
        for (i, g) in self.g_new.iter().enumerate() {
            acc[(i, i)] += l * g;
        }
        let (vals, mut vecs) = sym_eig_desc(&(acc / (l + tau)));
        for j in 0..vecs.ncols() {
            if vecs[(j, j)] < 0.0 {
                vecs.column_mut(j).neg_mut();
            }
        }
        let cut = params.xi_r * self.threshold_scale();
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > cut).collect();
        if keep.is_empty() {
            self.p_new = DMatrix::zeros(m, 0);
            self.g_new.clear();
            self.status = Status::Stable;
            self.l = 0;
            return None;
        }
        let settled = keep.iter().all(|&i| {
            keep.iter().all(|&j| {
                let v = vecs[(i, j)];
                if i == j {
                    v > params.identity_diag_min
                } else {
                    v.abs() < params.identity_offdiag_max
                }
            })
        });
        self.p_new = &self.p_new * select_columns(&vecs, &keep);
        self.g_new = keep.iter().map(|&i| vals[i]).collect();
        if settled {
            let merged = self.p_new.clone();
            self.p_stable = orthonormalize(&hstack(&self.p_stable, &merged));
            self.g_stable.extend(self.g_new.drain(..));
            self.p_new = DMatrix::zeros(m, 0);
            self.status = Status::Stable;
            self.l = 0;
            Some(merged)
        } else {
            self.l += params.tau_d;
            None
        }
    }

    /// Drops stable directions whose recent variance fell below
    /// `delete_frac` of their recorded variance. Returns the dropped columns.
    pub fn remove_decayed(&mut self, params: &SubspaceParams) -> DMatrix<f64> {
        let m = self.dim();
        let tau = self.d_del.len().max(1) as f64;
        let dmat = DMatrix::from_columns(&self.d_del);
        self.d_del.clear();
        if self.p_stable.ncols() == 0 || dmat.ncols() == 0 {
            return DMatrix::zeros(m, 0);
        }
        let proj = self.p_stable.transpose() * dmat;
        let (mut keep, mut drop) = (Vec::new(), Vec::new());
        for i in 0..self.p_stable.ncols() {
            let energy = proj.row(i).norm_squared() / tau;
            if energy < params.delete_frac * self.g_stable[i] {
                drop.push(i);
            } else {
                keep.push(i);
            }
        }
        let removed = select_columns(&self.p_stable, &drop);
        if !drop.is_empty() {
            self.p_stable = select_columns(&self.p_stable, &keep);
            self.g_stable = keep.iter().map(|&i| self.g_stable[i]).collect();
        }
        removed
    }

    /// One frame of the state machine. `diff` is `L̂_{t−1} − f·L̂_{t−2}` and
    /// `beta_prev_sq` is `‖β̂_{t−1}‖²`. A full buffer is processed instead of
    /// receiving the current difference.
    pub fn update(&mut self, diff: &DVector<f64>, beta_prev_sq: f64, params: &SubspaceParams) -> Vec<UpdateEvent> {
        let mut events = Vec::new();
        self.frame += 1;
        match self.status {
            Status::Stable => {
                let delta = self.delta(params);
                if let DetectionThreshold::RunningMedian { window, .. } = params.delta {
                    self.push_energy(beta_prev_sq, window);
                }
                if self.detect_trigger(diff, beta_prev_sq, delta) {
                    events.push(UpdateEvent::Triggered);
                }
            }
            Status::Detection => {
                if self.d.len() < params.tau_d {
                    self.d.push(diff.clone());
                } else {
                    let count = self.detect_new_directions(params);
                    events.push(UpdateEvent::Detected { count });
                }
            }
            Status::Rotation => {
                if self.d.len() < params.tau_r {
                    self.d.push(diff.clone());
                } else {
                    match self.rotate_new_directions(params) {
                        Some(directions) => events.push(UpdateEvent::Merged { directions }),
                        None => events.push(UpdateEvent::Rotated { count: self.p_new.ncols() }),
                    }
                }
            }
        }
        if self.d_del.len() < params.tau_del {
            self.d_del.push(diff.clone());
        } else {
            let directions = self.remove_decayed(params);
            if directions.ncols() > 0 {
                events.push(UpdateEvent::Removed { directions });
            }
        }
        events
    }
}

/// Principal directions of the differences `L_t − f·L_{t−1}` over the
/// training block, with eigenvalues above `train_eig_frac` of the largest.
pub fn train_initial(frames: &DMatrix<f64>, f: f64, params: &SubspaceParams) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (m, t0) = frames.shape();
    if t0 < 2 {
        return Err(Error::TooFewFrames(t0));
    }
    let mut cov = DMatrix::zeros(m, m);
    for t in 1..t0 {
        let d = frames.column(t) - f * frames.column(t - 1);
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (t0 - 1) as f64;
    let (vals, vecs) = sym_eig_desc(&cov);
    let top = vals.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return Ok((DMatrix::zeros(m, 0), Vec::new()));
    }
    let keep: Vec<usize> = (0..vals.len())
        .filter(|&i| vals[i] > params.train_eig_frac * top)
        .take(m - 1)
        .collect();
    Ok((select_columns(&vecs, &keep), keep.iter().map(|&i| vals[i]).collect()))
}

/// Orthonormal basis of the orthogonal complement of `span(P)`.
pub fn orth_complement(p: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (m, r) = p.shape();
    if r >= m {
        return Err(Error::NoComplement { rank: r, dim: m });
    }
    let err = orthonormality_error(p);
    if err > 1e-8 {
        return Err(Error::NotOrthonormal(err));
    }
    Ok(householder_complement(p))
}
