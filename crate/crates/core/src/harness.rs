//! Experiment orchestration: single runs, Monte Carlo averaging, metric files,
//! the self-check suite, and the command-line front end.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l1solver::{solve_bpdn, L1Problem, SolverTolerances};
use crate::linalg::{max_abs, mix_seed, orthonormality_error, select_columns};
use crate::model::{generate_sequence, Dataset, ScenarioConfig, SupportEvent};
use crate::oracle::{lp_oracle, normalize_columns};
use crate::subspace::{orth_complement, Status, UpdateEvent};
use crate::tracker::{expected_noise_energy, Method, TrackerParams, TrackerState};

pub const RUN_CSV_HEADER: [&str; 10] = [
    "t",
    "method",
    "percentage_error",
    "beta_sq",
    "beta_resid_sq",
    "eps_used",
    "rank_est",
    "status",
    "support_size",
    "wall_ms",
];

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub tracker: TrackerParams,
    pub methods: Vec<Method>,
    /// Feed the true support as the predicted support of `modcs`.
    #[serde(default)]
    pub modcs_oracle: bool,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// The reference experiment with training length `t0`.
    pub fn paper(t0: usize) -> RunConfig {
        let (scenario, _) = ScenarioConfig::paper(t0, 0);
        RunConfig {
            tracker: TrackerParams {
                eps_factor: 0.25,
                ..TrackerParams::for_dim(scenario.m)
            },
            scenario,
            methods: vec![Method::NoiseCanceled, Method::Basic, Method::Pj],
            modcs_oracle: false,
            trials: 50,
            master_seed: 20_100_614,
            out: None,
        }
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_reader(io::BufReader::new(File::open(path)?))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method is required".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.scenario.t0 < 2 {
            return Err(Error::InvalidConfig("t0 must be at least 2".into()));
        }
        self.scenario.validate()?;
        self.tracker.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    pub t: usize,
    pub method: Method,
    /// `None` when the true sparse part is zero.
    pub percentage_error: Option<f64>,
    pub beta_sq: f64,
    pub beta_resid_sq: f64,
    pub eps_used: f64,
    pub rank_est: usize,
    pub status: Status,
    pub support_size: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeRecord {
    pub t: usize,
    pub count: usize,
    /// Largest `|⟨p, u⟩|` between a merged direction and a direction added after training.
    pub coherence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovalRecord {
    pub t: usize,
    pub count: usize,
    /// Largest `|⟨p, u⟩|` between a removed direction and a deleted true direction.
    pub coherence: f64,
}

/// Subspace events seen by one method during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timeline {
    pub triggers: Vec<usize>,
    pub detections: Vec<(usize, usize)>,
    pub merges: Vec<MergeRecord>,
    pub removals: Vec<RemovalRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub seed: u64,
    pub frames: Vec<FrameMetrics>,
    pub timelines: Vec<(Method, Timeline)>,
}

impl RunMetrics {
    pub fn method_frames(&self, method: Method) -> impl Iterator<Item = &FrameMetrics> {
        self.frames.iter().filter(move |f| f.method == method)
    }

    pub fn timeline(&self, method: Method) -> Option<&Timeline> {
        self.timelines.iter().find(|(m, _)| *m == method).map(|(_, t)| t)
    }
}

/// `‖S − Ŝ‖₂ / ‖S‖₂`, or `None` when `S = 0`.
pub fn percentage_error(s_true: &DVector<f64>, s_hat: &DVector<f64>) -> Option<f64> {
    let denom = s_true.norm();
    if denom == 0.0 {
        return None;
    }
    Some((s_true - s_hat).norm() / denom)
}

fn coherence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    if a.ncols() == 0 || b.ncols() == 0 {
        return 0.0;
    }
    max_abs(&(a.transpose() * b))
}

/// True directions that enter after training and those that are deleted.
fn tracked_directions(data: &Dataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let t0 = data.config.t0;
    let added: Vec<usize> = data
        .event_log
        .iter()
        .filter(|e| e.time > t0)
        .flat_map(|e| e.add.iter().copied())
        .collect();
    let deleted: Vec<usize> = data.event_log.iter().flat_map(|e| e.delete.iter().copied()).collect();
    (select_columns(&data.u, &added), select_columns(&data.u, &deleted))
}

/// Streams frames `t0+1..=T_total` of `data` through one method.
pub fn run_method(data: &Dataset, method: Method, params: &TrackerParams, modcs_oracle: bool) -> Result<(Vec<FrameMetrics>, Timeline)> {
    let cfg = &data.config;
    let mut state = TrackerState::from_training(&data.training_matrix(), params)?;
    let (added, deleted) = tracked_directions(data);
    let mut timeline = Timeline::default();
    let mut frames = Vec::with_capacity(cfg.t_total - cfg.t0);
    let mut prev_support: Vec<usize> = Vec::new();
    for t in cfg.t0 + 1..=cfg.t_total {
        let fr = data.frame(t);
        let t_pred: &[usize] = if modcs_oracle { &fr.support_t } else { &prev_support };
        let start = Instant::now();
        let out = state.step(method, &fr.m, t_pred, params)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        for ev in &out.events {
            match ev {
                UpdateEvent::Triggered => timeline.triggers.push(t),
                UpdateEvent::Detected { count } => timeline.detections.push((t, *count)),
                UpdateEvent::Rotated { .. } => {}
                UpdateEvent::Merged { directions } => timeline.merges.push(MergeRecord {
                    t,
                    count: directions.ncols(),
                    coherence: coherence(directions, &added),
                }),
                UpdateEvent::Removed { directions } => timeline.removals.push(RemovalRecord {
                    t,
                    count: directions.ncols(),
                    coherence: coherence(directions, &deleted),
                }),
            }
        }
        frames.push(FrameMetrics {
            t,
            method,
            percentage_error: percentage_error(&fr.s, &out.s_hat),
            beta_sq: out.beta_sq,
            beta_resid_sq: out.beta_resid_sq,
            eps_used: out.eps_used,
            rank_est: out.rank,
            status: out.status,
            support_size: out.support.len(),
            wall_ms,
        });
        prev_support = out.support;
    }
    Ok((frames, timeline))
}

/// Generates one trial with `trial_seed` and runs every configured method on it.
pub fn run_single(cfg: &RunConfig, trial_seed: u64) -> Result<RunMetrics> {
    cfg.validate()?;
    let scenario = ScenarioConfig {
        seed: trial_seed,
        ..cfg.scenario.clone()
    };
    let data = generate_sequence(&scenario)?;
    let mut frames = Vec::new();
    let mut timelines = Vec::new();
    for &method in &cfg.methods {
        let (f, tl) = run_method(&data, method, &cfg.tracker, cfg.modcs_oracle)?;
        frames.extend(f);
        timelines.push((method, tl));
    }
    Ok(RunMetrics {
        seed: trial_seed,
        frames,
        timelines,
    })
}

pub fn trial_seed(master_seed: u64, trial: usize) -> u64 {
    mix_seed(master_seed, trial as u64)
}

/// Worker count: `RRPCP_THREADS` if set, otherwise the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("RRPCP_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub t: usize,
    pub method: Method,
    /// Trials with a defined percentage error at this frame.
    pub n: usize,
    pub mean_percentage_error: Option<f64>,
    pub stderr_percentage_error: Option<f64>,
    pub mean_beta_sq: f64,
    pub mean_eps_used: f64,
    pub mean_rank_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarlo {
    pub trials: Vec<RunMetrics>,
    pub summary: Vec<SummaryRow>,
}

impl MonteCarlo {
    pub fn mean_error(&self, method: Method, t: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.method == method && r.t == t)
            .and_then(|r| r.mean_percentage_error)
    }
}

pub fn summarize(cfg: &RunConfig, trials: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    let sc = &cfg.scenario;
    for &method in &cfg.methods {
        let per_trial: Vec<Vec<&FrameMetrics>> = trials.iter().map(|r| r.method_frames(method).collect()).collect();
        for (k, t) in (sc.t0 + 1..=sc.t_total).enumerate() {
            let errs: Vec<f64> = per_trial.iter().filter_map(|fr| fr[k].percentage_error).collect();
            let n = errs.len();
            let (mean, stderr) = if n == 0 {
                (None, None)
            } else {
                let mean = errs.iter().sum::<f64>() / n as f64;
                let stderr = if n > 1 {
                    let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    (var / n as f64).sqrt()
                } else {
                    0.0
                };
                (Some(mean), Some(stderr))
            };
            let avg = |g: &dyn Fn(&FrameMetrics) -> f64| per_trial.iter().map(|fr| g(fr[k])).sum::<f64>() / per_trial.len() as f64;
            rows.push(SummaryRow {
                t,
                method,
                n,
                mean_percentage_error: mean,
                stderr_percentage_error: stderr,
                mean_beta_sq: avg(&|f| f.beta_sq),
                mean_eps_used: avg(&|f| f.eps_used),
                mean_rank_est: avg(&|f| f.rank_est as f64),
            });
        }
    }
    rows
}

/// Runs `cfg.trials` independent trials; trial `i` uses `trial_seed(master_seed, i)`.
pub fn run_monte_carlo(cfg: &RunConfig) -> Result<MonteCarlo> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let trials: Vec<RunMetrics> = pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|i| run_single(cfg, trial_seed(cfg.master_seed, i)))
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = summarize(cfg, &trials);
    Ok(MonteCarlo { trials, summary })
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|e| Error::Format(format!("bad number {s:?}: {e}")))
}

fn parse_usize(s: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|e| Error::Format(format!("bad integer {s:?}: {e}")))
}

pub fn write_run_csv<W: Write>(out: W, frames: &[FrameMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_CSV_HEADER)?;
    for f in frames {
        w.write_record([
            f.t.to_string(),
            f.method.as_str().to_string(),
            f.percentage_error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(f.beta_sq),
            fmt_f64(f.beta_resid_sq),
            fmt_f64(f.eps_used),
            f.rank_est.to_string(),
            f.status.as_str().to_string(),
            f.support_size.to_string(),
            fmt_f64(f.wall_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_csv<R: Read>(input: R) -> Result<Vec<FrameMetrics>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(RUN_CSV_HEADER.iter().copied()) {
        return Err(Error::Format("unexpected run CSV header".into()));
    }
    let mut frames = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let method = Method::parse(&rec[1]).ok_or_else(|| Error::Format(format!("unknown method {:?}", &rec[1])))?;
        let status = match &rec[7] {
            "stable" => Status::Stable,
            "detection" => Status::Detection,
            "rotation" => Status::Rotation,
            other => return Err(Error::Format(format!("unknown status {other:?}"))),
        };
        frames.push(FrameMetrics {
            t: parse_usize(&rec[0])?,
            method,
            percentage_error: if rec[2].is_empty() { None } else { Some(parse_f64(&rec[2])?) },
            beta_sq: parse_f64(&rec[3])?,
            beta_resid_sq: parse_f64(&rec[4])?,
            eps_used: parse_f64(&rec[5])?,
            rank_est: parse_usize(&rec[6])?,
            status,
            support_size: parse_usize(&rec[8])?,
            wall_ms: parse_f64(&rec[9])?,
        });
    }
    Ok(frames)
}

pub fn write_mc_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "t",
        "method",
        "n",
        "mean_percentage_error",
        "stderr_percentage_error",
        "mean_beta_sq",
        "mean_eps_used",
        "mean_rank_est",
    ])?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.method.as_str().to_string(),
            r.n.to_string(),
            r.mean_percentage_error.map(fmt_f64).unwrap_or_default(),
            r.stderr_percentage_error.map(fmt_f64).unwrap_or_default(),
            fmt_f64(r.mean_beta_sq),
            fmt_f64(r.mean_eps_used),
            fmt_f64(r.mean_rank_est),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the noise-energy table. Empirical columns are present when a
/// Monte Carlo estimate was requested.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub dt: usize,
    pub analytic_plain: f64,
    pub analytic_canceled: f64,
    pub empirical: Option<NoiseEstimate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub plain: f64,
    pub plain_stderr: f64,
    pub canceled: f64,
    pub canceled_stderr: f64,
}

/// Monte Carlo estimate of `‖β_t‖²` and `‖β_t − f·β_{t−1}‖²` with the true
/// subspace and true backgrounds, normalized by the coupled variance of the
/// entering direction. `β` is taken `dt` frames after the direction enters.
pub fn noise_energy_monte_carlo(f: f64, theta: f64, dts: &[usize], trials: usize, seed: u64) -> Result<Vec<NoiseEstimate>> {
    let m = 16;
    let tau = 2;
    let dt_max = dts.iter().copied().max().unwrap_or(1).max(1);
    let sigma_new = 1.0;
    let mut sigma_sq = vec![4.0, 3.0, 2.0, 1.5, sigma_new];
    sigma_sq.resize(m, 0.0);
    let base = ScenarioConfig {
        m,
        frame_h: 4,
        frame_w: 4,
        f,
        f_d: 0.5 * f,
        theta,
        sigma_sq,
        events: vec![
            SupportEvent { time: 1, add: vec![0, 1, 2, 3], delete: vec![] },
            SupportEvent { time: tau, add: vec![4], delete: vec![] },
        ],
        t0: tau + dt_max,
        t_total: tau + dt_max,
        k_objects: 0,
        magnitude: 0.0,
        p_stay: 1.0,
        seed: 0,
    };
    let mut sums = vec![(0.0, 0.0, 0.0, 0.0); dts.len()];
    for i in 0..trials {
        let cfg = ScenarioConfig {
            seed: mix_seed(seed, i as u64),
            ..base.clone()
        };
        let data = generate_sequence(&cfg)?;
        let p = select_columns(&data.u, &[0, 1, 2, 3]);
        let perp_t = orth_complement(&p)?.transpose();
        let coupled = (&perp_t * data.u.column(4)).norm_squared() * sigma_new;
        for (k, &dt) in dts.iter().enumerate() {
            let t = tau + dt;
            let beta = &perp_t * &data.frame(t).l;
            let beta_prev = &perp_t * &data.frame(t - 1).l;
            let plain = beta.norm_squared() / coupled;
            let canceled = (&beta - f * &beta_prev).norm_squared() / coupled;
            let s = &mut sums[k];
            s.0 += plain;
            s.1 += plain * plain;
            s.2 += canceled;
            s.3 += canceled * canceled;
        }
    }
    let n = trials as f64;
    let stat = |sum: f64, sq: f64| {
        let mean = sum / n;
        let var = ((sq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
        (mean, (var / n).sqrt())
    };
    Ok(sums
        .into_iter()
        .map(|(a, a2, b, b2)| {
            let (plain, plain_stderr) = stat(a, a2);
            let (canceled, canceled_stderr) = stat(b, b2);
            NoiseEstimate {
                plain,
                plain_stderr,
                canceled,
                canceled_stderr,
            }
        })
        .collect())
}

pub fn noise_curve(f: f64, theta: f64, dt_max: usize, trials: usize, seed: u64) -> Result<Vec<NoiseRow>> {
    let dts: Vec<usize> = (1..=dt_max).collect();
    let empirical = if trials > 0 {
        Some(noise_energy_monte_carlo(f, theta, &dts, trials, seed)?)
    } else {
        None
    };
    Ok(dts
        .iter()
        .enumerate()
        .map(|(k, &dt)| {
            let (analytic_plain, analytic_canceled) = expected_noise_energy(&[1.0], &[1.0], theta, f, dt);
            NoiseRow {
                dt,
                analytic_plain,
                analytic_canceled,
                empirical: empirical.as_ref().map(|e| e[k]),
            }
        })
        .collect())
}

pub fn write_noise_csv<W: Write>(out: W, rows: &[NoiseRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let with_mc = rows.first().map(|r| r.empirical.is_some()).unwrap_or(false);
    let mut header = vec!["dt", "analytic_plain", "analytic_canceled"];
    if with_mc {
        header.extend(["empirical_plain", "stderr_plain", "empirical_canceled", "stderr_canceled"]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.dt.to_string(), fmt_f64(r.analytic_plain), fmt_f64(r.analytic_canceled)];
        if let Some(e) = r.empirical {
            rec.extend([e.plain, e.plain_stderr, e.canceled, e.canceled_stderr].map(fmt_f64));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of one self-check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Random instance for solver checks: `n × q` Gaussian matrix with unit
/// columns, `k`-sparse ground truth, optional noise and exclusions.
pub fn random_l1_instance(rng: &mut ChaCha8Rng, n: usize, q: usize, k: usize, eps: f64, n_excluded: usize) -> L1Problem {
    let mut a = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    normalize_columns(&mut a);
    let mut s0 = DVector::zeros(q);
    let mut idx: Vec<usize> = (0..q).collect();
    for i in 0..k {
        let j = rng.gen_range(i..q);
        idx.swap(i, j);
        s0[idx[i]] = rng.sample::<f64, _>(StandardNormal) + if rng.gen::<bool>() { 1.0 } else { -1.0 };
    }
    let mut b = &a * &s0;
    if eps > 0.0 {
        for v in b.iter_mut() {
            *v += 0.5 * (eps / n as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut excluded: Vec<usize> = idx[..k.min(n_excluded)].to_vec();
    excluded.sort_unstable();
    L1Problem::new(a, b, eps).with_excluded(excluded)
}

/// Relative objective mismatch between the solver and the LP oracle.
pub fn oracle_mismatch(prob: &L1Problem, tol: &SolverTolerances) -> Result<f64> {
    let rep = solve_bpdn(prob, tol)?;
    let lp = lp_oracle(prob)?;
    if rep.residual_sq > prob.eps + tol.feasibility_tol {
        return Ok(f64::INFINITY);
    }
    let scale = lp.objective.abs().max(1e-9 * (1.0 + prob.b.norm()));
    Ok((rep.objective - lp.objective).abs() / scale)
}

/// Solver-vs-oracle agreement and structural invariants on a short run.
pub fn validate_suite(seed: u64) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut push = |name: &str, res: Result<(bool, String)>| {
        let (passed, detail) = res.unwrap_or_else(|e| (false, format!("error: {e}")));
        checks.push(Check {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    push("solver_matches_lp_oracle", (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 100));
        let tol = SolverTolerances::default();
        let mut worst: f64 = 0.0;
        for i in 0..24 {
            let eps = if i % 2 == 0 { 0.0 } else { 1e-2 };
            let prob = random_l1_instance(&mut rng, 10, 20, 2, eps, if i % 4 >= 2 { 1 } else { 0 });
            worst = worst.max(oracle_mismatch(&prob, &tol)?);
        }
        Ok((worst <= 1e-5, format!("worst relative mismatch {worst:.3e} over 24 instances")))
    })());

    let run = (|| -> Result<_> {
        let mut cfg = RunConfig::paper(400);
        cfg.scenario.seed = mix_seed(seed, 200);
        cfg.scenario.t_total = cfg.scenario.t0 + 160;
        let data = generate_sequence(&cfg.scenario)?;
        let params = cfg.tracker.clone();
        let mut state = TrackerState::from_training(&data.training_matrix(), &params)?;
        let m = cfg.scenario.m;
        let mut worst_proj: f64 = 0.0;
        let mut worst_orth: f64 = 0.0;
        let mut worst_cross: f64 = 0.0;
        let mut additive = true;
        let mut frames = Vec::new();
        for fr in &data.frames {
            for i in 0..m {
                additive &= fr.m[i] == fr.l[i] + fr.s[i];
            }
        }
        for t in cfg.scenario.t0 + 1..=cfg.scenario.t_total {
            let fr = data.frame(t);
            let out = state.step(Method::NoiseCanceled, &fr.m, &[], &params)?;
            for i in 0..m {
                additive &= out.l_hat[i] == fr.m[i] - out.s_hat[i];
            }
            let proj = &state.p_hat * state.p_hat.transpose() + &state.p_perp * state.p_perp.transpose();
            worst_proj = worst_proj.max(max_abs(&(proj - DMatrix::<f64>::identity(m, m))));
            worst_orth = worst_orth.max(orthonormality_error(&state.subspace.basis()));
            worst_cross = worst_cross.max(max_abs(&(state.subspace.p_stable.transpose() * &state.subspace.p_new)));
            frames.push(FrameMetrics {
                t,
                method: Method::NoiseCanceled,
                percentage_error: percentage_error(&fr.s, &out.s_hat),
                beta_sq: out.beta_sq,
                beta_resid_sq: out.beta_resid_sq,
                eps_used: out.eps_used,
                rank_est: out.rank,
                status: out.status,
                support_size: out.support.len(),
                wall_ms: 0.1 * t as f64 / 3.0,
            });
        }
        Ok((worst_proj, worst_orth, worst_cross, additive, frames))
    })();
    match run {
        Ok((proj, orth, cross, additive, frames)) => {
            push("projector_identity", Ok((proj <= 1e-8, format!("max |P̂P̂ᵀ + P̂⊥P̂⊥ᵀ − I| = {proj:.3e}"))));
            push(
                "orthonormal_after_update",
                Ok((orth <= 1e-8 && cross <= 1e-8, format!("max orthonormality error {orth:.3e}, cross term {cross:.3e}"))),
            );
            push("additivity", Ok((additive, "M = L + S and L̂ = M − Ŝ bit-for-bit".to_string())));
            push("csv_round_trip", (|| {
                let mut buf = Vec::new();
                write_run_csv(&mut buf, &frames)?;
                let back = read_run_csv(&buf[..])?;
                Ok((back == frames, format!("{} rows", frames.len())))
            })());
        }
        Err(e) => {
            for name in ["projector_identity", "orthonormal_after_update", "additivity", "csv_round_trip"] {
                push(name, Err(Error::Format(e.to_string())));
            }
        }
    }
    checks
}

#[derive(Parser, Debug)]
#[command(name = "rrpcp", about = "Online low-rank plus sparse recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated dataset (`.csv` or binary).
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// One run, per-frame metrics as CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Methods to run (nc, basic, pj, modcs); defaults to the configuration.
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Monte Carlo averages as CSV.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        method: Vec<String>,
    },
    /// Solver-vs-oracle agreement and structural checks.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Expected noise energies, optionally with a Monte Carlo estimate.
    NoiseCurve {
        #[arg(long, default_value_t = 0.9)]
        f: f64,
        #[arg(long, default_value_t = 0.4)]
        theta: f64,
        #[arg(long, default_value_t = 30)]
        dt_max: usize,
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn apply_methods(cfg: &mut RunConfig, names: &[String]) -> Result<()> {
    if names.is_empty() {
        return Ok(());
    }
    cfg.methods = names
        .iter()
        .map(|n| Method::parse(n).ok_or_else(|| Error::InvalidConfig(format!("unknown method {n:?}"))))
        .collect::<Result<_>>()?;
    Ok(())
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { common } => {
            let mut cfg = RunConfig::load(&common.config)?;
            if let Some(s) = common.seed {
                cfg.scenario.seed = s;
            }
            let data = generate_sequence(&cfg.scenario)?;
            match common.out.or(cfg.out) {
                Some(p) => data.save(&p),
                None => data.write_csv(io::stdout().lock()),
            }
        }
        Command::Run { common, method } => {
            let mut cfg = RunConfig::load(&common.config)?;
            apply_methods(&mut cfg, &method)?;
            let seed = common.seed.unwrap_or(cfg.scenario.seed);
            let metrics = run_single(&cfg, seed)?;
            write_run_csv(output(&common.out.or(cfg.out))?, &metrics.frames)
        }
        Command::Mc { common, trials, method } => {
            let mut cfg = RunConfig::load(&common.config)?;
            apply_methods(&mut cfg, &method)?;
            if let Some(n) = trials {
                cfg.trials = n;
            }
            if let Some(s) = common.seed {
                cfg.master_seed = s;
            }
            let mc = run_monte_carlo(&cfg)?;
            write_mc_csv(output(&common.out.or(cfg.out))?, &mc.summary)
        }
        Command::Validate { seed } => {
            let checks = validate_suite(seed);
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(Error::Format(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
        Command::NoiseCurve { f, theta, dt_max, trials, seed, out } => {
            if dt_max == 0 {
                return Err(Error::InvalidConfig("dt-max must be at least 1".into()));
            }
            let rows = noise_curve(f, theta, dt_max, trials, seed)?;
            write_noise_csv(output(&out)?, &rows)
        }
    }
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentage_error_examples() {
        let s = DVector::from_vec(vec![3.0, 4.0, 0.0]);
        assert_eq!(percentage_error(&s, &s), Some(0.0));
        assert_eq!(percentage_error(&s, &DVector::zeros(3)), Some(1.0));
        let e = percentage_error(&s, &DVector::from_vec(vec![3.0, 0.0, 0.0])).unwrap();
        assert!((e - 0.8).abs() < 1e-15);
        assert_eq!(percentage_error(&DVector::zeros(3), &s), None);
    }

    #[test]
    fn run_csv_round_trips_bit_exactly() {
        let frames = vec![
            FrameMetrics {
                t: 7,
                method: Method::Pj,
                percentage_error: Some(0.1 + 0.2),
                beta_sq: 1.0 / 3.0,
                beta_resid_sq: 1e-300,
                eps_used: 2.5e-7,
                rank_est: 33,
                status: Status::Rotation,
                support_size: 9,
                wall_ms: 12.345_678_901_234_567,
            },
            FrameMetrics {
                t: 8,
                method: Method::NoiseCanceled,
                percentage_error: None,
                beta_sq: 0.0,
                beta_resid_sq: f64::MIN_POSITIVE,
                eps_used: 1e-4,
                rank_est: 0,
                status: Status::Stable,
                support_size: 0,
                wall_ms: 0.0,
            },
        ];
        let mut buf = Vec::new();
        write_run_csv(&mut buf, &frames).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,method,percentage_error,beta_sq,beta_resid_sq,eps_used,rank_est,status,support_size,wall_ms\n"));
        assert_eq!(read_run_csv(&buf[..]).unwrap(), frames);
    }

    #[test]
    fn analytic_noise_curve_first_row() {
        let rows = noise_curve(0.9, 0.4, 3, 0, 0).unwrap();
        assert!((rows[0].analytic_plain - 0.514).abs() < 1e-12);
        assert!((rows[0].analytic_canceled - 0.19).abs() < 1e-12);
    }

    #[test]
    fn bad_flags_give_nonzero_exit() {
        assert_ne!(cli_main(["rrpcp", "frobnicate"]), 0);
        assert_ne!(cli_main(["rrpcp", "run"]), 0);
        assert_ne!(cli_main(["rrpcp", "run", "--config", "/nonexistent/x.json"]), 0);
    }
}
