//! Synthetic data: a piecewise-stationary low-rank background plus moving
//! sparse foreground blocks.
//!
//! The background is `L_t = U·x_t` with a fixed random orthonormal `U` and a
//! latent vector `x_t` whose support changes at scheduled events. Indices that
//! enter the support start with a fraction `theta` of their stable variance and
//! then follow an AR-1 recursion with coefficient `f`; indices scheduled for
//! deletion shrink geometrically by `f_d` with no innovation. The foreground is
//! a union of `k` 3×3 blocks of constant magnitude doing a lazy random walk.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::mix_seed;

/// Magic prefix of the binary dataset layout.
pub const BINARY_MAGIC: &[u8; 6] = b"RRPCP1";

/// A change of the latent support at frame `time`. Indices are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEvent {
    pub time: usize,
    #[serde(default)]
    pub add: Vec<usize>,
    #[serde(default)]
    pub delete: Vec<usize>,
}

impl SupportEvent {
    /// Events every `period` frames starting at `first`, one per `(add, delete)` pair.
    pub fn periodic<I>(first: usize, period: usize, changes: I) -> Vec<SupportEvent>
    where
        I: IntoIterator<Item = (Vec<usize>, Vec<usize>)>,
    {
        changes
            .into_iter()
            .enumerate()
            .map(|(k, (add, delete))| SupportEvent {
                time: first + k * period,
                add,
                delete,
            })
            .collect()
    }
}

/// Full generative description of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub m: usize,
    pub frame_h: usize,
    pub frame_w: usize,
    pub f: f64,
    pub f_d: f64,
    pub theta: f64,
    pub sigma_sq: Vec<f64>,
    pub events: Vec<SupportEvent>,
    pub t0: usize,
    #[serde(rename = "T_total", alias = "t_total")]
    pub t_total: usize,
    pub k_objects: usize,
    pub magnitude: f64,
    pub p_stay: f64,
    pub seed: u64,
}

/// Layout of the reference experiment, kept alongside the config so that
/// harness code can find the interesting indices without re-deriving them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperLayout {
    pub new_index: usize,
    pub new_time: usize,
    pub decay_index: usize,
    pub decay_time: usize,
}

impl ScenarioConfig {
    /// 128-pixel (16×8) frames, 32 background directions with variances
    /// log-spaced from 1e4 down to 9, a variance-50 direction entering at
    /// `t0 + 5`, and one existing direction decaying from `t0 + 100`.
    pub fn paper(t0: usize, seed: u64) -> (ScenarioConfig, PaperLayout) {
        let m = 128;
        let mut variances: Vec<f64> = (0..32)
            .map(|k| 1e4 * (9.0_f64 / 1e4).powf(k as f64 / 31.0))
            .collect();
        variances.push(50.0);
        variances.sort_by(|a, b| b.total_cmp(a));
        let new_index = variances.iter().position(|&v| v == 50.0).unwrap();
        let decay_index = 16;
        let mut sigma_sq = variances;
        sigma_sq.resize(m, 0.0);
        let initial: Vec<usize> = (0..33).filter(|&i| i != new_index).collect();
        let layout = PaperLayout {
            new_index,
            new_time: t0 + 5,
            decay_index,
            decay_time: t0 + 100,
        };
        let cfg = ScenarioConfig {
            m,
            frame_h: 16,
            frame_w: 8,
            f: 0.9,
            f_d: 0.1,
            theta: 0.4,
            sigma_sq,
            events: vec![
                SupportEvent { time: 1, add: initial, delete: vec![] },
                SupportEvent { time: layout.new_time, add: vec![new_index], delete: vec![] },
                SupportEvent { time: layout.decay_time, add: vec![], delete: vec![decay_index] },
            ],
            t0,
            t_total: t0 + 250,
            k_objects: 1,
            magnitude: 5.0,
            p_stay: 0.8,
            seed,
        };
        (cfg, layout)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.frame_h * self.frame_w != self.m {
            return bad(format!(
                "frame {}x{} does not cover m = {}",
                self.frame_h, self.frame_w, self.m
            ));
        }
        if !(0.0 < self.f_d && self.f_d < self.f && self.f < 1.0) {
            return bad(format!("need 0 < f_d < f < 1, got f = {}, f_d = {}", self.f, self.f_d));
        }
        if !(0.0 < self.theta && self.theta < 1.0) {
            return bad(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if self.sigma_sq.len() != self.m {
            return bad(format!("sigma_sq has {} entries, expected {}", self.sigma_sq.len(), self.m));
        }
        if self.sigma_sq.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("sigma_sq entries must be finite and nonnegative".into());
        }
        if self.sigma_sq.windows(2).any(|w| w[1] > w[0]) {
            return bad("sigma_sq must be non-increasing".into());
        }
        if !(0.0..=1.0).contains(&self.p_stay) {
            return bad(format!("p_stay must lie in [0, 1], got {}", self.p_stay));
        }
        if self.t_total < self.t0 {
            return bad("T_total must not be smaller than t0".into());
        }
        if self.k_objects > 0 && (self.frame_h < 3 || self.frame_w < 3) {
            return bad("a 3x3 object does not fit in the frame".into());
        }
        if !self.magnitude.is_finite() {
            return bad("magnitude must be finite".into());
        }
        self.check_events()
    }

    fn check_events(&self) -> Result<()> {
        let mut active = BTreeSet::new();
        let mut retired = BTreeSet::new();
        let mut last = 0;
        for ev in &self.events {
            let fail = |reason: String| Err(Error::InvalidEvent { time: ev.time, reason });
            if ev.time == 0 || ev.time <= last {
                return fail("event times must be positive and strictly increasing".into());
            }
            last = ev.time;
            let add: BTreeSet<usize> = ev.add.iter().copied().collect();
            let del: BTreeSet<usize> = ev.delete.iter().copied().collect();
            if add.len() != ev.add.len() || del.len() != ev.delete.len() {
                return fail("duplicate index inside an event".into());
            }
            if let Some(i) = add.iter().chain(del.iter()).find(|&&i| i >= self.m) {
                return fail(format!("index {i} out of range"));
            }
            if let Some(i) = add.intersection(&del).next() {
                return fail(format!("index {i} both added and deleted"));
            }
            if let Some(i) = add.iter().find(|i| active.contains(*i) || retired.contains(*i)) {
                return fail(format!("index {i} is already in (or was removed from) the support"));
            }
            if let Some(i) = del.iter().find(|i| !active.contains(*i)) {
                return fail(format!("index {i} is not an active support index"));
            }
            for i in del {
                active.remove(&i);
                retired.insert(i);
            }
            active.extend(add);
        }
        Ok(())
    }
}

/// Per-index life cycle of a latent coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Absent,
    Transient { since: usize },
    Stable,
    Decaying { since: usize },
}

impl Phase {
    pub fn in_support(self) -> bool {
        !matches!(self, Phase::Absent)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    /// Frame index of `x` (0 before the first frame).
    pub t: usize,
    pub x: DVector<f64>,
    pub phase: Vec<Phase>,
}

impl LatentState {
    pub fn new(m: usize) -> Self {
        LatentState {
            t: 0,
            x: DVector::zeros(m),
            phase: vec![Phase::Absent; m],
        }
    }

    /// `N_t`: indices currently in the support.
    pub fn support(&self) -> Vec<usize> {
        (0..self.phase.len()).filter(|&i| self.phase[i].in_support()).collect()
    }
}

/// Diagonals of `F_t` and `Q_t` for one step, plus the phases after the step.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub f_diag: Vec<f64>,
    pub q_diag: Vec<f64>,
    pub next_phase: Vec<Phase>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Added,
    Decaying,
}

/// Variance of a coordinate relative to its stable variance, `dt` frames
/// after the change: `1 − (1−θ)·f^{2dt}` for an added index, `f_d^{2dt}` for a
/// decaying one (with `dt` counting decay steps).
pub fn variance_envelope(kind: EnvelopeKind, dt: usize, cfg: &ScenarioConfig) -> f64 {
    let dt = dt as i32;
    match kind {
        EnvelopeKind::Added => 1.0 - (1.0 - cfg.theta) * cfg.f.powi(2 * dt),
        EnvelopeKind::Decaying => cfg.f_d.powi(2 * dt),
    }
}

// Transient coordinates are reported as stable once within 1% of their
// stable variance.
const SETTLED_FRACTION: f64 = 0.99;

/// Builds `F_t` and `Q_t` for the step producing frame `state.t + 1`.
pub fn assemble_transition(
    state: &LatentState,
    event: Option<&SupportEvent>,
    cfg: &ScenarioConfig,
) -> Result<Transition> {
    let m = cfg.m;
    let t = state.t + 1;
    let mut adding = vec![false; m];
    let mut deleting = vec![false; m];
    if let Some(ev) = event {
        let fail = |reason: String| Err(Error::InvalidEvent { time: ev.time, reason });
        if ev.time != t {
            return fail(format!("event applied at frame {t}"));
        }
        for &i in &ev.add {
            if i >= m {
                return fail(format!("index {i} out of range"));
            }
            adding[i] = true;
        }
        for &i in &ev.delete {
            if i >= m {
                return fail(format!("index {i} out of range"));
            }
            if adding[i] {
                return fail(format!("index {i} both added and deleted"));
            }
            deleting[i] = true;
        }
    }

    let mut f_diag = vec![0.0; m];
    let mut q_diag = vec![0.0; m];
    let mut next_phase = state.phase.clone();
    for i in 0..m {
        let sigma = cfg.sigma_sq[i];
        let phase = state.phase[i];
        if adding[i] {
            if phase != Phase::Absent {
                return Err(Error::InvalidEvent {
                    time: t,
                    reason: format!("index {i} is already in the support"),
                });
            }
            q_diag[i] = cfg.theta * sigma;
            next_phase[i] = Phase::Transient { since: t };
            continue;
        }
        if deleting[i] {
            if !matches!(phase, Phase::Transient { .. } | Phase::Stable) {
                return Err(Error::InvalidEvent {
                    time: t,
                    reason: format!("index {i} cannot start decaying from {phase:?}"),
                });
            }
            f_diag[i] = cfg.f_d;
            next_phase[i] = Phase::Decaying { since: t };
            continue;
        }
        match phase {
            Phase::Absent => {}
            Phase::Transient { since } => {
                f_diag[i] = cfg.f;
                q_diag[i] = (1.0 - cfg.f * cfg.f) * sigma;
                if variance_envelope(EnvelopeKind::Added, t - since, cfg) >= SETTLED_FRACTION {
                    next_phase[i] = Phase::Stable;
                }
            }
            Phase::Stable => {
                f_diag[i] = cfg.f;
                q_diag[i] = (1.0 - cfg.f * cfg.f) * sigma;
            }
            Phase::Decaying { .. } => f_diag[i] = cfg.f_d,
        }
    }
    Ok(Transition {
        f_diag,
        q_diag,
        next_phase,
    })
}

/// `x_t = F·x_{t−1} + ν`, `ν_i ~ N(0, Q_i)` independently.
pub fn latent_step<R: Rng + ?Sized>(state: &LatentState, tr: &Transition, rng: &mut R) -> LatentState {
    let x = DVector::from_fn(state.x.len(), |i, _| {
        let mut v = tr.f_diag[i] * state.x[i];
        if tr.q_diag[i] > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            v += tr.q_diag[i].sqrt() * z;
        }
        v
    });
    LatentState {
        t: state.t + 1,
        x,
        phase: tr.next_phase.clone(),
    }
}

/// Random `m × m` orthonormal matrix: Q factor (with positive `diag(R)`) of an
/// i.i.d. standard normal matrix.
pub fn build_mixing_matrix(m: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    crate::linalg::orthonormalize(&g)
}

/// One step of the object random walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Stay,
    Down,
    Up,
    Right,
    Left,
}

impl Move {
    fn delta(self) -> (isize, isize) {
        match self {
            Move::Stay => (0, 0),
            Move::Down => (1, 0),
            Move::Up => (-1, 0),
            Move::Right => (0, 1),
            Move::Left => (0, -1),
        }
    }
}

/// Draws a move: stay with probability `p_stay`, otherwise one of the four
/// unit steps with probability `(1 − p_stay)/4` each.
pub fn propose_move<R: Rng + ?Sized>(p_stay: f64, rng: &mut R) -> Move {
    let u: f64 = rng.gen();
    if u < p_stay {
        return Move::Stay;
    }
    let k = (((u - p_stay) / (1.0 - p_stay)) * 4.0) as usize;
    [Move::Down, Move::Up, Move::Right, Move::Left][k.min(3)]
}

/// Object centers as `(row, col)`; each object covers the 3×3 block around it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneState {
    pub centers: Vec<(usize, usize)>,
}

impl SceneState {
    pub fn random<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Self {
        let centers = (0..cfg.k_objects)
            .map(|_| (rng.gen_range(1..cfg.frame_h - 1), rng.gen_range(1..cfg.frame_w - 1)))
            .collect();
        SceneState { centers }
    }

    /// Foreground frame: `magnitude` on every covered pixel (overlaps are not
    /// summed), zero elsewhere. Pixels are stored row-major.
    pub fn render(&self, cfg: &ScenarioConfig) -> DVector<f64> {
        let mut s = DVector::zeros(cfg.m);
        for &(r, c) in &self.centers {
            for rr in r - 1..=r + 1 {
                for cc in c - 1..=c + 1 {
                    s[rr * cfg.frame_w + cc] = cfg.magnitude;
                }
            }
        }
        s
    }
}

/// Moves every object once and renders the new foreground. Moves that would
/// push part of a block outside the frame are rejected.
pub fn sparse_step<R: Rng + ?Sized>(
    scene: &SceneState,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> (SceneState, DVector<f64>) {
    let centers = scene
        .centers
        .iter()
        .map(|&(r, c)| {
            let (dr, dc) = propose_move(cfg.p_stay, rng).delta();
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            let inside = nr >= 1
                && nc >= 1
                && nr <= cfg.frame_h as isize - 2
                && nc <= cfg.frame_w as isize - 2;
            if inside {
                (nr as usize, nc as usize)
            } else {
                (r, c)
            }
        })
        .collect();
    let next = SceneState { centers };
    let s = next.render(cfg);
    (next, s)
}

/// Ground truth and observation for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub t: usize,
    pub x: DVector<f64>,
    pub l: DVector<f64>,
    pub s: DVector<f64>,
    pub m: DVector<f64>,
    /// `N_t`.
    pub support_n: Vec<usize>,
    /// `T_t`.
    pub support_t: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub u: DMatrix<f64>,
    /// `frames[k]` holds frame `t = k + 1`.
    pub frames: Vec<FrameRecord>,
    /// Events in the order they were applied.
    pub event_log: Vec<SupportEvent>,
}

/// Generates the whole sequence; deterministic for a fixed config.
pub fn generate_sequence(cfg: &ScenarioConfig) -> Result<Dataset> {
    cfg.validate()?;
    let u = build_mixing_matrix(cfg.m, mix_seed(cfg.seed, 0));
    let mut rng_x = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 1));
    let mut rng_s = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 2));

    let mut state = LatentState::new(cfg.m);
    let mut scene: Option<SceneState> = None;
    let mut events = cfg.events.iter().peekable();
    let mut event_log = Vec::new();
    let mut frames = Vec::with_capacity(cfg.t_total);
    for t in 1..=cfg.t_total {
        let event = events.next_if(|ev| ev.time == t);
        let tr = assemble_transition(&state, event, cfg)?;
        state = latent_step(&state, &tr, &mut rng_x);
        if let Some(ev) = event {
            event_log.push(ev.clone());
        }
        let l = &u * &state.x;
        let s = if t > cfg.t0 && cfg.k_objects > 0 {
            let (next, s) = match &scene {
                None => {
                    let first = SceneState::random(cfg, &mut rng_s);
                    let s = first.render(cfg);
                    (first, s)
                }
                Some(prev) => sparse_step(prev, cfg, &mut rng_s),
            };
            scene = Some(next);
            s
        } else {
            DVector::zeros(cfg.m)
        };
        let m = &l + &s;
        let support_t = (0..cfg.m).filter(|&i| s[i] != 0.0).collect();
        frames.push(FrameRecord {
            t,
            support_n: state.support(),
            x: state.x.clone(),
            l,
            s,
            m,
            support_t,
        });
    }
    Ok(Dataset {
        config: cfg.clone(),
        u,
        frames,
        event_log,
    })
}

impl Dataset {
    pub fn frame(&self, t: usize) -> &FrameRecord {
        &self.frames[t - 1]
    }

    /// `[L_1 … L_{t0}]`, the sparse-free training block.
    pub fn training_matrix(&self) -> DMatrix<f64> {
        let t0 = self.config.t0;
        DMatrix::from_fn(self.config.m, t0, |r, c| self.frames[c].l[(r, 0)])
    }

    /// One row per frame: `t`, then the `m` values of `M`, `L` and `S`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let m = self.config.m;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for name in ["M", "L", "S"] {
            header.extend((0..m).map(|i| format!("{name}{i}")));
        }
        w.write_record(&header)?;
        for fr in &self.frames {
            let mut row = vec![fr.t.to_string()];
            for v in [&fr.m, &fr.l, &fr.s] {
                row.extend(v.iter().map(|x| format!("{x:.16e}")));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Little-endian binary layout: `"RRPCP1"`, `u32 m`, `u32 T_total`, then
    /// for each frame the `3m` doubles `M | L | S`.
    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.config.m as u32).to_le_bytes())?;
        w.write_all(&(self.frames.len() as u32).to_le_bytes())?;
        for fr in &self.frames {
            for v in [&fr.m, &fr.l, &fr.s] {
                for x in v.iter() {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => self.write_csv(BufWriter::new(file)),
            _ => self.write_binary(file),
        }
    }
}

/// Frames read back from the binary layout.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryFrames {
    pub m: usize,
    pub frames: Vec<(DVector<f64>, DVector<f64>, DVector<f64>)>,
}

pub fn read_binary<R: Read>(input: R) -> Result<BinaryFrames> {
    let mut r = BufReader::new(input);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let m = u32::from_le_bytes(word) as usize;
    r.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let read_vec = |r: &mut BufReader<R>| -> Result<DVector<f64>> {
        let mut v = DVector::zeros(m);
        let mut buf = [0u8; 8];
        for i in 0..m {
            r.read_exact(&mut buf)?;
            v[i] = f64::from_le_bytes(buf);
        }
        Ok(v)
    };
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let mv = read_vec(&mut r)?;
        let lv = read_vec(&mut r)?;
        let sv = read_vec(&mut r)?;
        frames.push((mv, lv, sv));
    }
    Ok(BinaryFrames { m, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        let mut sigma_sq = vec![100.0, 50.0, 20.0, 10.0];
        sigma_sq.resize(16, 0.0);
        ScenarioConfig {
            m: 16,
            frame_h: 4,
            frame_w: 4,
            f: 0.9,
            f_d: 0.1,
            theta: 0.4,
            sigma_sq,
            events: vec![
                SupportEvent { time: 1, add: vec![0, 1, 2], delete: vec![] },
                SupportEvent { time: 30, add: vec![3], delete: vec![1] },
            ],
            t0: 20,
            t_total: 40,
            k_objects: 1,
            magnitude: 5.0,
            p_stay: 0.8,
            seed: 11,
        }
    }

    #[test]
    fn mixing_matrix_is_orthonormal() {
        let u1 = build_mixing_matrix(1, 3);
        assert_eq!(u1.shape(), (1, 1));
        assert!((u1[(0, 0)].abs() - 1.0).abs() < 1e-15);
        for seed in 0..5 {
            let u = build_mixing_matrix(4, seed);
            assert!(crate::linalg::orthonormality_error(&u) < 1e-12);
        }
    }

    #[test]
    fn transition_entries_follow_the_phase() {
        let cfg = ScenarioConfig {
            sigma_sq: {
                let mut s = vec![50.0, 1.0, 1.0];
                s.resize(16, 0.0);
                s
            },
            ..small_cfg()
        };
        let mut state = LatentState::new(16);
        state.phase[1] = Phase::Stable;
        state.phase[2] = Phase::Stable;
        state.t = 4;
        let ev = SupportEvent { time: 5, add: vec![0], delete: vec![2] };
        let tr = assemble_transition(&state, Some(&ev), &cfg).unwrap();
        assert_eq!((tr.f_diag[0], tr.q_diag[0]), (0.0, 20.0));
        assert!((tr.f_diag[1] - 0.9).abs() < 1e-15 && (tr.q_diag[1] - 0.19).abs() < 1e-12);
        assert_eq!((tr.f_diag[2], tr.q_diag[2]), (0.1, 0.0));
        assert_eq!((tr.f_diag[5], tr.q_diag[5]), (0.0, 0.0));
        assert_eq!(tr.next_phase[0], Phase::Transient { since: 5 });
        assert_eq!(tr.next_phase[2], Phase::Decaying { since: 5 });
    }

    #[test]
    fn overlapping_event_is_rejected() {
        let cfg = small_cfg();
        let state = LatentState::new(16);
        let ev = SupportEvent { time: 1, add: vec![0, 1], delete: vec![1] };
        assert!(matches!(
            assemble_transition(&state, Some(&ev), &cfg),
            Err(Error::InvalidEvent { .. })
        ));
    }

    #[test]
    fn zero_noise_keeps_zero_state_and_decay_is_exact() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let state = LatentState::new(16);
        let tr = assemble_transition(&state, None, &cfg).unwrap();
        let next = latent_step(&state, &tr, &mut rng);
        assert!(next.x.iter().all(|&v| v == 0.0));

        let mut state = LatentState::new(16);
        state.t = 9;
        state.x[3] = 10.0;
        state.phase[3] = Phase::Stable;
        let ev = SupportEvent { time: 10, add: vec![], delete: vec![3] };
        let tr = assemble_transition(&state, Some(&ev), &cfg).unwrap();
        let next = latent_step(&state, &tr, &mut rng);
        assert!((next.x[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn envelope_values() {
        let cfg = small_cfg();
        assert!((variance_envelope(EnvelopeKind::Added, 1, &cfg) - 0.514).abs() < 1e-12);
        assert!((variance_envelope(EnvelopeKind::Decaying, 2, &cfg) - 1e-4).abs() < 1e-16);
        assert!((variance_envelope(EnvelopeKind::Added, 0, &cfg) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn objects_cover_nine_pixels() {
        let cfg = ScenarioConfig { p_stay: 1.0, ..small_cfg() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scene = SceneState::random(&cfg, &mut rng);
        let s0 = scene.render(&cfg);
        let (next, s1) = sparse_step(&scene, &cfg, &mut rng);
        assert_eq!(next, scene);
        assert_eq!(s0, s1);
        assert_eq!(s1.iter().filter(|&&v| v != 0.0).count(), 9);
        assert!(s1.iter().all(|&v| v == 0.0 || v == 5.0));
    }

    #[test]
    fn generated_frames_are_additive_and_reproducible() {
        let cfg = small_cfg();
        let a = generate_sequence(&cfg).unwrap();
        let b = generate_sequence(&cfg).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.m, fb.m);
            for i in 0..cfg.m {
                assert_eq!(fa.m[i], fa.l[i] + fa.s[i]);
            }
            if fa.t <= cfg.t0 {
                assert!(fa.support_t.is_empty());
            }
        }
        assert_eq!(a.event_log, cfg.events);
    }

    #[test]
    fn no_background_means_m_equals_s() {
        let cfg = ScenarioConfig {
            sigma_sq: vec![0.0; 16],
            events: vec![],
            ..small_cfg()
        };
        let d = generate_sequence(&cfg).unwrap();
        for fr in d.frames.iter().filter(|f| f.t > cfg.t0) {
            assert_eq!(fr.m, fr.s);
        }
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let mut cfg = small_cfg();
        cfg.f_d = 0.95;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.sigma_sq[5] = 1e3;
        assert!(cfg.validate().is_err());
        let mut cfg = small_cfg();
        cfg.events.push(SupportEvent { time: 35, add: vec![1], delete: vec![] });
        assert!(matches!(cfg.validate(), Err(Error::InvalidEvent { .. })));
    }

    #[test]
    fn binary_layout_round_trips() {
        let d = generate_sequence(&small_cfg()).unwrap();
        let mut buf = Vec::new();
        d.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"RRPCP1");
        assert_eq!(buf.len(), 6 + 8 + 40 * 3 * 16 * 8);
        let back = read_binary(&buf[..]).unwrap();
        assert_eq!(back.m, 16);
        assert_eq!(back.frames[7].0, d.frames[7].m);
        assert_eq!(back.frames[39].2, d.frames[39].s);
    }

    #[test]
    fn periodic_schedule() {
        let evs = SupportEvent::periodic(10, 5, vec![(vec![1], vec![]), (vec![2], vec![0])]);
        assert_eq!(evs[1].time, 15);
        assert_eq!(evs[1].delete, vec![0]);
    }
}
