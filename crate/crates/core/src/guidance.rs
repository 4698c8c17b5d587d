//! Reverse-time Euler–Maruyama sampling with derivative-free guidance.
//!
//! One reverse step from `t` to `t - dt` is
//!
//! ```text
//! x <- x + beta(t) [x / 2 + s(x, t) + alpha_x g_x(x) + alpha_y (y_pref - y)] dt
//!        + sqrt(beta(t) dt) z
//! ```
//!
//! where `g_x` acts on the design block only (attraction into a design box,
//! or towards a preferred design when predicting scores) and the score term
//! acts on the score block only. The final step into `t = 0` is noise-free.
//!
//! All chains advance in lockstep so the network is evaluated once per step
//! on the whole batch. Noise for chain `i` at grid index `k` comes from the
//! stream `(seed, i, k, 0)`.

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng;
use crate::scorenet::ScoreNetwork;
use crate::sde::VpSchedule;

/// Max-norm distance (normalized units) within which a score prediction's
/// design block must land on the queried design.
pub const PREDICT_TOL: f64 = 0.05;

/// Default design pull for score prediction. The design block then settles
/// within roughly `1/sqrt(2 alpha_x)` of the query.
pub const PREDICT_ALPHA_X: f64 = 900.0;

/// Default step count for score prediction, the smallest round number that
/// keeps [`PREDICT_ALPHA_X`] stable under the default schedule.
pub const PREDICT_STEPS: usize = 10_000;

/// Anything that maps a batch of noisy samples to scores.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>>;
}

impl ScoreModel for ScoreNetwork {
    fn dim(&self) -> usize {
        self.config().io_dim()
    }

    fn score_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        self.forward_batch(xs, ts)
    }
}

/// Wraps a model and counts per-row evaluations.
pub struct CountingModel<'a, M> {
    inner: &'a M,
    count: AtomicUsize,
}

impl<'a, M: ScoreModel> CountingModel<'a, M> {
    pub fn new(inner: &'a M) -> Self {
        CountingModel {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn evaluations(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<M: ScoreModel> ScoreModel for CountingModel<'_, M> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn score_batch(&self, xs: ArrayView2<'_, f64>, ts: &[f64]) -> Result<Array2<f64>> {
        self.count.fetch_add(xs.nrows(), Ordering::Relaxed);
        self.inner.score_batch(xs, ts)
    }
}

/// Guidance settings, all in the normalized units the model was trained in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// Preferred scores; chain `i` is guided towards `y_pref[i % len]`.
    pub y_pref: Vec<Vec<f64>>,
    pub design_box: Option<Vec<(f64, f64)>>,
    pub alpha_x: f64,
    pub alpha_y: f64,
    pub steps: usize,
    pub seed: u64,
}

impl GuidanceConfig {
    pub fn unconditional(steps: usize, seed: u64) -> Self {
        GuidanceConfig {
            y_pref: Vec::new(),
            design_box: None,
            alpha_x: 0.0,
            alpha_y: 0.0,
            steps,
            seed,
        }
    }

    /// Score-guided settings used for benchmark sampling.
    pub fn toward(y_pref: Vec<Vec<f64>>, steps: usize, seed: u64) -> Self {
        GuidanceConfig {
            y_pref,
            design_box: None,
            alpha_x: 0.0,
            alpha_y: 1.0,
            steps,
            seed,
        }
    }

    pub fn validate(&self, d: usize, m: usize) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be >= 1".into()));
        }
        if !(self.alpha_x >= 0.0 && self.alpha_y >= 0.0) {
            return Err(Error::InvalidConfig("guidance scales must be >= 0".into()));
        }
        if self.alpha_y > 0.0 && self.y_pref.is_empty() {
            return Err(Error::MissingScoreTarget);
        }
        for y in &self.y_pref {
            check_len(m, y.len())?;
        }
        if let Some(b) = &self.design_box {
            check_len(d, b.len())?;
            if b.iter().any(|(lo, hi)| !(lo <= hi)) {
                return Err(Error::InvalidConfig("design box needs lo <= hi".into()));
            }
        }
        Ok(())
    }

    pub fn target(&self, chain: usize) -> Option<&[f64]> {
        if self.y_pref.is_empty() {
            None
        } else {
            Some(&self.y_pref[chain % self.y_pref.len()])
        }
    }
}

/// Design-block guidance of one step.
#[derive(Debug, Clone, Copy)]
pub enum DesignGuide<'a> {
    None,
    /// Pull into `[lo, hi]` per coordinate.
    Box(&'a [(f64, f64)]),
    /// Pull towards a preferred design.
    Target(&'a [f64]),
}

/// Guidance terms of a single chain for one Euler–Maruyama step.
#[derive(Debug, Clone, Copy)]
pub struct StepGuide<'a> {
    pub d: usize,
    pub design: DesignGuide<'a>,
    pub alpha_x: f64,
    pub y_pref: Option<&'a [f64]>,
    pub alpha_y: f64,
}

impl<'a> StepGuide<'a> {
    pub fn from_config(cfg: &'a GuidanceConfig, d: usize, chain: usize) -> Self {
        StepGuide {
            d,
            design: cfg
                .design_box
                .as_deref()
                .map_or(DesignGuide::None, DesignGuide::Box),
            alpha_x: cfg.alpha_x,
            y_pref: cfg.target(chain),
            alpha_y: cfg.alpha_y,
        }
    }
}

/// One guided Euler–Maruyama update given a precomputed score.
pub fn euler_step(
    x: &[f64],
    score: &[f64],
    beta: f64,
    dt: f64,
    guide: &StepGuide<'_>,
    noise: Option<&[f64]>,
) -> Vec<f64> {
    let d = guide.d;
    let diffusion = (beta * dt).sqrt();
    (0..x.len())
        .map(|j| {
            let mut drift = x[j] / 2.0 + score[j];
            if j < d {
                let pull = match guide.design {
                    DesignGuide::None => 0.0,
                    DesignGuide::Box(b) => x[j].clamp(b[j].0, b[j].1) - x[j],
                    DesignGuide::Target(p) => p[j] - x[j],
                };
                drift += guide.alpha_x * pull;
            } else if let Some(y) = guide.y_pref {
                drift += guide.alpha_y * (y[j - d] - x[j]);
            }
            let z = noise.map_or(0.0, |n| n[j]);
            x[j] + beta * drift * dt + diffusion * z
        })
        .collect()
}

/// Evaluates the model and applies one guided reverse step.
pub fn reverse_step<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    x: &[f64],
    t: f64,
    dt: f64,
    guide: &StepGuide<'_>,
    noise: Option<&[f64]>,
) -> Result<Vec<f64>> {
    if !(t - dt >= -1e-12) {
        return Err(Error::TimeOutOfRange(t - dt));
    }
    check_len(model.dim(), x.len())?;
    if let Some(n) = noise {
        check_len(x.len(), n.len())?;
    }
    let xs = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let score = model.score_batch(xs, &[t])?;
    let score = score.row(0).to_vec();
    Ok(euler_step(x, &score, sched.beta_at(t)?, dt, guide, noise))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub state: Vec<f64>,
    /// Set when the chain produced a non-finite state; `state` then holds
    /// the last finite state.
    pub flagged: bool,
}

/// States of one chain from `t = 1` down to `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub samples: Vec<Generated>,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Lockstep chain state shared by the plain and the scaled samplers.
pub(crate) struct Chains {
    pub states: Array2<f64>,
    pub flagged: Vec<bool>,
    pub trajectories: Option<Vec<Trajectory>>,
}

impl Chains {
    pub fn init(k: usize, dim: usize, seed: u64, record: bool) -> Self {
        let mut states = Array2::zeros((k, dim));
        for i in 0..k {
            let z = rng::normal_vec(&[seed, i as u64, rng::INIT, 0], dim);
            states.row_mut(i).assign(&ndarray::ArrayView1::from(&z[..]));
        }
        let trajectories = record.then(|| {
            states
                .outer_iter()
                .map(|r| Trajectory {
                    states: vec![r.to_vec()],
                })
                .collect()
        });
        Chains {
            states,
            flagged: vec![false; k],
            trajectories,
        }
    }

    /// Stores a new state for chain `i` unless it is non-finite.
    pub fn commit(&mut self, i: usize, next: &[f64]) {
        if self.flagged[i] {
            return;
        }
        if next.iter().all(|v| v.is_finite()) {
            self.states
                .row_mut(i)
                .assign(&ndarray::ArrayView1::from(next));
        } else {
            self.flagged[i] = true;
        }
    }

    pub fn record(&mut self) {
        if let Some(tr) = &mut self.trajectories {
            for (row, t) in self.states.outer_iter().zip(tr.iter_mut()) {
                t.states.push(row.to_vec());
            }
        }
    }

    pub fn finish(self) -> SampleOutput {
        SampleOutput {
            samples: self
                .states
                .outer_iter()
                .zip(self.flagged)
                .map(|(r, flagged)| Generated {
                    state: r.to_vec(),
                    flagged,
                })
                .collect(),
            trajectories: self.trajectories,
        }
    }
}

/// Noise for chain `chain` on the step leaving grid index `k`; zero on the
/// final step.
pub(crate) fn step_noise(seed: u64, chain: usize, k: usize, dup: u64, dim: usize) -> Option<Vec<f64>> {
    (k > 1).then(|| rng::normal_vec(&[seed, chain as u64, k as u64, dup], dim))
}

pub(crate) fn check_model<M: ScoreModel>(model: &M, d: usize, cfg: &GuidanceConfig) -> Result<usize> {
    let dim = model.dim();
    if d == 0 || d >= dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: d,
        });
    }
    cfg.validate(d, dim - d)?;
    Ok(dim)
}

/// Draws `k` samples with `cfg`'s guidance; with no targets and zero scales
/// this is unconditional generation.
pub fn sample<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    d: usize,
    cfg: &GuidanceConfig,
    k: usize,
    record: bool,
) -> Result<SampleOutput> {
    if k == 0 {
        return Err(Error::InvalidConfig("sample count K must be >= 1".into()));
    }
    let dim = check_model(model, d, cfg)?;
    let steps = cfg.steps;
    let dt = 1.0 / steps as f64;
    let mut chains = Chains::init(k, dim, cfg.seed, record);
    let mut scores: Option<Array2<f64>> = None;
    for kk in (1..=steps).rev() {
        let t = kk as f64 / steps as f64;
        let beta = sched.beta_at(t)?;
        let s = match scores.take() {
            Some(s) => s,
            None => model.score_batch(chains.states.view(), &vec![t; k])?,
        };
        for i in 0..k {
            let noise = step_noise(cfg.seed, i, kk, 0, dim);
            let guide = StepGuide::from_config(cfg, d, i);
            let x = chains.states.row(i).to_vec();
            let next = euler_step(&x, &s.row(i).to_vec(), beta, dt, &guide, noise.as_deref());
            chains.commit(i, &next);
        }
        chains.record();
    }
    Ok(chains.finish())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub score: Vec<f64>,
    pub design: Vec<f64>,
    pub converged: bool,
}

/// Design-to-score prediction: runs one chain pulled towards
/// `(x_pref, 0_m)` on the design block and reads off the final score block.
pub fn predict_scores<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    x_pref: &[f64],
    cfg: &GuidanceConfig,
) -> Result<Prediction> {
    let d = x_pref.len();
    let dim = model.dim();
    if d == 0 || d >= dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: d,
        });
    }
    if x_pref.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("preferred design"));
    }
    if cfg.steps == 0 || !(cfg.alpha_x >= 0.0) {
        return Err(Error::InvalidConfig("prediction needs steps >= 1 and alpha_x >= 0".into()));
    }
    // The design pull is integrated explicitly, so beta * alpha_x * dt must
    // stay below 2 or the design block oscillates away from x_pref.
    if sched.beta_max * cfg.alpha_x / cfg.steps as f64 >= 2.0 {
        return Err(Error::InvalidConfig(format!(
            "alpha_x {} is unstable with {} steps; need beta_max * alpha_x / steps < 2",
            cfg.alpha_x, cfg.steps
        )));
    }
    let guide = StepGuide {
        d,
        design: DesignGuide::Target(x_pref),
        alpha_x: cfg.alpha_x,
        y_pref: None,
        alpha_y: 0.0,
    };
    let steps = cfg.steps;
    let dt = 1.0 / steps as f64;
    let mut x = rng::normal_vec(&[cfg.seed, 0, rng::INIT, 0], dim);
    for kk in (1..=steps).rev() {
        let t = kk as f64 / steps as f64;
        let noise = step_noise(cfg.seed, 0, kk, 0, dim);
        let next = reverse_step(model, sched, &x, t, dt, &guide, noise.as_deref())?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prediction chain"));
        }
        x = next;
    }
    let converged = x[..d]
        .iter()
        .zip(x_pref)
        .all(|(a, b)| (a - b).abs() <= PREDICT_TOL);
    Ok(Prediction {
        score: x[d..].to_vec(),
        design: x[..d].to_vec(),
        converged,
    })
}
