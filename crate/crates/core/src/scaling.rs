//! Inference-time scaling on top of guided sampling.
//!
//! Rewards are self-supervised: the Tweedie estimate of the clean score block
//! is compared with the preferred score, smaller distance being better. Two
//! samplers use them. Self-IS duplicates each particle `J` times every few
//! steps and keeps one duplicate drawn with probability proportional to
//! `exp(-R / alpha_i)`. FKS keeps a population whose particles carry the best
//! reward seen along their lineage and resamples it systematically.
//!
//! Both only engage when the model's fidelity exceeds `tau`; otherwise they
//! return exactly what [`guidance::sample`] returns.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::guidance::{self, euler_step, step_noise, Chains, GuidanceConfig, SampleOutput, ScoreModel, StepGuide};
use crate::pareto;
use crate::rng;
use crate::sde::{tweedie_with_alpha_bar, VpSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMode {
    None,
    SelfIs,
    Fks,
}

impl FromStr for ScalingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ScalingMode::None),
            "self-is" | "self_is" => Ok(ScalingMode::SelfIs),
            "fks" => Ok(ScalingMode::Fks),
            other => Err(Error::InvalidConfig(format!("unknown scaling mode {other:?}"))),
        }
    }
}

impl fmt::Display for ScalingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScalingMode::None => "none",
            ScalingMode::SelfIs => "self-is",
            ScalingMode::Fks => "fks",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub mode: ScalingMode,
    pub j: usize,
    pub alpha_i: f64,
    pub every: usize,
    pub tau: f64,
    pub m_fidelity: usize,
}

/// Fidelity threshold for single-objective tasks.
pub const TAU_SOO: f64 = 0.827;
/// Fidelity threshold for multi-objective tasks.
pub const TAU_MOO: f64 = 0.87;

impl ScalingConfig {
    pub fn new(mode: ScalingMode, multi_objective: bool) -> Self {
        ScalingConfig {
            mode,
            j: 16,
            alpha_i: 0.1,
            every: 5,
            tau: if multi_objective { TAU_MOO } else { TAU_SOO },
            m_fidelity: 256,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.every == 0 {
            return Err(Error::InvalidConfig("every must be >= 1".into()));
        }
        if !(self.alpha_i > 0.0) {
            return Err(Error::InvalidConfig("alpha_i must be > 0".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig("tau must lie in (0, 1]".into()));
        }
        if self.m_fidelity == 0 {
            return Err(Error::InvalidConfig("fidelity sample count must be >= 1".into()));
        }
        // J = 1 is accepted so the degenerate case can be exercised.
        if self.j == 0 {
            return Err(Error::InvalidConfig("duplication count must be >= 1".into()));
        }
        Ok(())
    }

    /// Whether scaling engages for a model of the given fidelity.
    pub fn active(&self, fidelity: f64) -> bool {
        self.mode != ScalingMode::None && fidelity > self.tau
    }

    /// Grid indices whose outgoing step is scaled. The final step is
    /// noise-free, so it is never duplicated.
    pub fn scaled_step(&self, k: usize) -> bool {
        k >= 2 && k % self.every == 0
    }
}

/// Expected network evaluations per particle for self-IS over `steps` steps.
pub fn self_is_nfe(steps: usize, j: usize, every: usize) -> usize {
    let scaled = (2..=steps).filter(|k| k % every == 0).count();
    steps + scaled * (j - 1)
}

/// Minimum Euclidean distance from `y` to any of `targets`.
pub fn reward_distance(y: &[f64], targets: &[&[f64]]) -> f64 {
    targets
        .iter()
        .map(|p| {
            p.iter()
                .zip(y)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Reward of a noisy state given its score, computed from the Tweedie
/// estimate of the whole augmented state.
pub fn reward_from_score(
    sched: &VpSchedule,
    x: &[f64],
    t: f64,
    score: &[f64],
    d: usize,
    targets: &[&[f64]],
) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::TimeOutOfRange(t));
    }
    let x0 = tweedie_with_alpha_bar(sched.alpha_bar(t), x, score)?;
    Ok(reward_distance(&x0[d..], targets))
}

/// Reward of `x` at time `t` against `y_pref`.
pub fn reward_at<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    x: &[f64],
    t: f64,
    d: usize,
    y_pref: &[f64],
) -> Result<f64> {
    check_len(model.dim(), x.len())?;
    check_len(model.dim() - d, y_pref.len())?;
    let xs = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
    let score = model.score_batch(xs, &[t])?;
    reward_from_score(sched, x, t, &score.row(0).to_vec(), d, &[y_pref])
}

/// Normalized selection probabilities `exp(-R / alpha_i)`. Non-finite
/// rewards get zero mass; if nothing has mass the result is uniform.
pub fn importance(rewards: &[f64], alpha_i: f64) -> Vec<f64> {
    let n = rewards.len();
    let best = rewards
        .iter()
        .copied()
        .filter(|r| r.is_finite())
        .fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = rewards
        .iter()
        .map(|&r| {
            if r.is_finite() && best.is_finite() {
                (-(r - best) / alpha_i).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 && total.is_finite() {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        w = vec![1.0 / n as f64; n];
    }
    w
}

/// Draws one duplicate index from the importance distribution.
pub fn select_duplicate<R: Rng>(rewards: &[f64], alpha_i: f64, rng: &mut R) -> usize {
    let probs = importance(rewards, alpha_i);
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Round-off can leave acc slightly below 1.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Systematic resampling: ancestor indices for `weights.len()` offspring
/// using the single uniform offset `u` in `[0, 1)`.
pub fn systematic_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().filter(|w| w.is_finite()).sum();
    let w: Vec<f64> = if total > 0.0 && total.is_finite() {
        weights
            .iter()
            .map(|&v| if v.is_finite() { v / total } else { 0.0 })
            .collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    let last = w.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let mut acc = w[0];
    let mut i = 0;
    for k in 0..n {
        let pos = (k as f64 + u) / n as f64;
        while pos >= acc && i < last {
            i += 1;
            acc += w[i];
        }
        out.push(i);
    }
    out
}

/// Scores every row at a common time.
fn eval<M: ScoreModel>(model: &M, states: ArrayView2<'_, f64>, t: f64) -> Result<Array2<f64>> {
    model.score_batch(states, &vec![t; states.nrows()])
}

fn targets_of(cfg: &GuidanceConfig, chain: usize) -> Result<Vec<&[f64]>> {
    cfg.target(chain)
        .map(|y| vec![y])
        .ok_or(Error::MissingScoreTarget)
}

/// Self-IS guided sampling. `fidelity` is the model's precomputed fidelity.
pub fn self_is_sample<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    d: usize,
    cfg: &GuidanceConfig,
    scfg: &ScalingConfig,
    fidelity: f64,
    k: usize,
    record: bool,
) -> Result<SampleOutput> {
    scfg.validate()?;
    if !scfg.active(fidelity) {
        return guidance::sample(model, sched, d, cfg, k, record);
    }
    if k == 0 {
        return Err(Error::InvalidConfig("sample count K must be >= 1".into()));
    }
    let dim = guidance::check_model(model, d, cfg)?;
    let steps = cfg.steps;
    let dt = 1.0 / steps as f64;
    let j = scfg.j;
    let mut chains = Chains::init(k, dim, cfg.seed, record);
    let mut scores = eval(model, chains.states.view(), 1.0)?;
    for kk in (1..=steps).rev() {
        let t = kk as f64 / steps as f64;
        let t_next = (kk - 1) as f64 / steps as f64;
        let beta = sched.beta_at(t)?;
        if !scfg.scaled_step(kk) {
            for i in 0..k {
                let guide = StepGuide::from_config(cfg, d, i);
                let noise = step_noise(cfg.seed, i, kk, 0, dim);
                let x = chains.states.row(i).to_vec();
                let next = euler_step(&x, &scores.row(i).to_vec(), beta, dt, &guide, noise.as_deref());
                chains.commit(i, &next);
            }
        } else {
            // All K * J candidates are scored in one batch.
            let mut cand = Array2::zeros((k * j, dim));
            for i in 0..k {
                let guide = StepGuide::from_config(cfg, d, i);
                let x = chains.states.row(i).to_vec();
                let s = scores.row(i).to_vec();
                for dup in 0..j {
                    let noise = step_noise(cfg.seed, i, kk, dup as u64, dim);
                    let next = euler_step(&x, &s, beta, dt, &guide, noise.as_deref());
                    cand.row_mut(i * j + dup).assign(&ArrayView1::from(&next[..]));
                }
            }
            let cand_scores = eval(model, cand.view(), t_next)?;
            let mut next_scores = Array2::zeros((k, dim));
            for i in 0..k {
                let targets = targets_of(cfg, i)?;
                let rewards: Vec<f64> = (0..j)
                    .map(|dup| {
                        let r = i * j + dup;
                        reward_from_score(
                            sched,
                            &cand.row(r).to_vec(),
                            t_next,
                            &cand_scores.row(r).to_vec(),
                            d,
                            &targets,
                        )
                        .unwrap_or(f64::INFINITY)
                    })
                    .collect();
                let mut sel_rng = rng::stream(&[cfg.seed, i as u64, kk as u64, rng::SELECT]);
                let pick = select_duplicate(&rewards, scfg.alpha_i, &mut sel_rng);
                let r = i * j + pick;
                chains.commit(i, &cand.row(r).to_vec());
                next_scores.row_mut(i).assign(&cand_scores.row(r));
            }
            chains.record();
            scores = next_scores;
            continue;
        }
        chains.record();
        if kk > 1 {
            scores = eval(model, chains.states.view(), t_next)?;
        }
    }
    Ok(chains.finish())
}

/// Per-slot history of running-best rewards, one entry per scaled step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FksTrace {
    pub r_best: Vec<Vec<f64>>,
}

/// Feynman–Kac steered sampling. Returns the samples and the lineage-aware
/// running-best reward history of every slot.
pub fn fks_sample<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    d: usize,
    cfg: &GuidanceConfig,
    scfg: &ScalingConfig,
    fidelity: f64,
    k: usize,
    record: bool,
) -> Result<(SampleOutput, FksTrace)> {
    scfg.validate()?;
    if !scfg.active(fidelity) {
        let out = guidance::sample(model, sched, d, cfg, k, record)?;
        return Ok((out, FksTrace::default()));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("sample count K must be >= 1".into()));
    }
    let dim = guidance::check_model(model, d, cfg)?;
    if cfg.y_pref.is_empty() {
        return Err(Error::MissingScoreTarget);
    }
    // Resampling moves particles between slots with different targets, so
    // rewards are measured against the whole target set.
    let all_targets: Vec<&[f64]> = cfg.y_pref.iter().map(Vec::as_slice).collect();
    let steps = cfg.steps;
    let dt = 1.0 / steps as f64;
    let mut chains = Chains::init(k, dim, cfg.seed, record);
    let mut r_best = vec![f64::INFINITY; k];
    let mut history: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut scores = eval(model, chains.states.view(), 1.0)?;
    for kk in (1..=steps).rev() {
        let t = kk as f64 / steps as f64;
        let t_next = (kk - 1) as f64 / steps as f64;
        let beta = sched.beta_at(t)?;
        for i in 0..k {
            let guide = StepGuide::from_config(cfg, d, i);
            let noise = step_noise(cfg.seed, i, kk, 0, dim);
            let x = chains.states.row(i).to_vec();
            let next = euler_step(&x, &scores.row(i).to_vec(), beta, dt, &guide, noise.as_deref());
            chains.commit(i, &next);
        }
        if kk == 1 {
            chains.record();
            break;
        }
        scores = eval(model, chains.states.view(), t_next)?;
        if scfg.scaled_step(kk) {
            for i in 0..k {
                let r = reward_from_score(
                    sched,
                    &chains.states.row(i).to_vec(),
                    t_next,
                    &scores.row(i).to_vec(),
                    d,
                    &all_targets,
                )
                .unwrap_or(f64::INFINITY);
                if chains.flagged[i] {
                    r_best[i] = f64::INFINITY;
                } else {
                    r_best[i] = r_best[i].min(r);
                }
                history[i].push(r_best[i]);
            }
            if k > 1 {
                let weights = importance(&r_best, scfg.alpha_i);
                let mut u_rng = rng::stream(&[cfg.seed, rng::SELECT, kk as u64, rng::SELECT]);
                let ancestors = systematic_resample(&weights, u_rng.gen());
                let states = chains.states.clone();
                let old_scores = scores.clone();
                let old_flags = chains.flagged.clone();
                let old_best = r_best.clone();
                let old_hist = history.clone();
                for (i, &a) in ancestors.iter().enumerate() {
                    chains.states.row_mut(i).assign(&states.row(a));
                    scores.row_mut(i).assign(&old_scores.row(a));
                    chains.flagged[i] = old_flags[a];
                    r_best[i] = old_best[a];
                    history[i] = old_hist[a].clone();
                }
            }
        }
        chains.record();
    }
    Ok((chains.finish(), FksTrace { r_best: history }))
}

/// Fidelity from the kept deviations: `exp(-mean)`, zero when nothing was kept.
pub fn fidelity_from_deviations(deviations: &[f64]) -> f64 {
    if deviations.is_empty() {
        return 0.0;
    }
    let mean = deviations.iter().sum::<f64>() / deviations.len() as f64;
    (-mean).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub fidelity: f64,
    pub kept: usize,
    pub generated: usize,
}

/// Keeps the generated scores that improve on the training data: below the
/// best score for one objective, not dominated by the training front
/// otherwise. Returns kept indices.
pub fn improving_indices(generated: &[&[f64]], train_scores: &[Vec<f64>]) -> Result<Vec<usize>> {
    let m = train_scores.first().map_or(0, Vec::len);
    if m == 0 {
        return Err(Error::Empty("training scores"));
    }
    let finite = |y: &[f64]| y.len() == m && y.iter().all(|v| v.is_finite());
    if m == 1 {
        let best = train_scores.iter().map(|y| y[0]).fold(f64::INFINITY, f64::min);
        return Ok((0..generated.len())
            .filter(|&i| finite(generated[i]) && generated[i][0] < best)
            .collect());
    }
    let front: Vec<&Vec<f64>> = pareto::first_front(train_scores)?
        .into_iter()
        .map(|i| &train_scores[i])
        .collect();
    Ok((0..generated.len())
        .filter(|&i| {
            finite(generated[i]) && !front.iter().any(|p| pareto::dominates_unchecked(p, generated[i]))
        })
        .collect())
}

/// Estimates model fidelity from `m_samples` unconditional samples against
/// normalized training rows of width `d + m`.
pub fn fidelity<M: ScoreModel>(
    model: &M,
    sched: &VpSchedule,
    train_rows: &[Vec<f64>],
    d: usize,
    m_samples: usize,
    steps: usize,
    seed: u64,
) -> Result<FidelityReport> {
    if train_rows.is_empty() {
        return Err(Error::Empty("training rows"));
    }
    let cfg = GuidanceConfig::unconditional(steps, seed);
    let out = guidance::sample(model, sched, d, &cfg, m_samples, false)?;
    let kept_rows: Vec<&[f64]> = out
        .samples
        .iter()
        .filter(|g| !g.flagged)
        .map(|g| g.state.as_slice())
        .collect();
    let gen_scores: Vec<&[f64]> = kept_rows.iter().map(|r| &r[d..]).collect();
    let train_scores: Vec<Vec<f64>> = train_rows.iter().map(|r| r[d..].to_vec()).collect();
    let kept = improving_indices(&gen_scores, &train_scores)?;
    let deviations: Vec<f64> = kept
        .iter()
        .map(|&i| {
            let x = &kept_rows[i][..d];
            let nearest = train_rows
                .iter()
                .min_by(|a, b| sq_dist(&a[..d], x).total_cmp(&sq_dist(&b[..d], x)))
                .expect("nonempty");
            sq_dist(&nearest[d..], gen_scores[i]).sqrt()
        })
        .collect();
    Ok(FidelityReport {
        fidelity: fidelity_from_deviations(&deviations),
        kept: kept.len(),
        generated: m_samples,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::guidance::tests::GaussianScore;
    use crate::guidance::CountingModel;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gaussian() -> GaussianScore {
        GaussianScore {
            mean: vec![0.4, 0.6, 0.3],
            var: 0.05,
            sched: VpSchedule::default(),
        }
    }

    fn guided(steps: usize, seed: u64) -> GuidanceConfig {
        GuidanceConfig::toward(vec![vec![0.0]], steps, seed)
    }

    #[test]
    fn reward_fixtures() {
        assert_eq!(reward_distance(&[0.2, 0.3], &[&[0.2, 0.3]]), 0.0);
        assert_eq!(reward_distance(&[0.5], &[&[1.0]]), 0.5);
        assert_eq!(reward_distance(&[3.0, 4.0], &[&[0.0, 0.0]]), 5.0);
        assert_eq!(reward_distance(&[3.0, 4.0], &[&[0.0, 0.0], &[3.0, 3.0]]), 1.0);
    }

    #[test]
    fn reward_uses_tweedie_estimate() {
        // With full signal Tweedie is the identity.
        let sched = VpSchedule::default();
        let r = reward_from_score(&sched, &[9.0, 0.5], 1e-12, &[0.0, 0.0], 1, &[&[1.0]]).unwrap();
        assert!((r - 0.5).abs() < 1e-9);
        assert!(reward_from_score(&sched, &[0.0, 0.0], 0.0, &[0.0, 0.0], 1, &[&[1.0]]).is_err());
    }

    #[test]
    fn importance_two_duplicates() {
        let p = importance(&[0.0, 10.0], 1.0);
        let expect = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p[0] - expect).abs() < 1e-12);
        assert!((expect - 0.99995).abs() < 1e-5);
    }

    #[test]
    fn importance_temperature_limit_is_uniform() {
        let p = importance(&[0.0, 3.0, 7.0, 1.0], 1e300);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn importance_underflow_falls_back_to_uniform() {
        let p = importance(&[f64::NAN, f64::INFINITY], 1.0);
        assert_eq!(p, vec![0.5, 0.5]);
        // Large rewards are shifted, so no underflow to all-zero.
        let p = importance(&[1e6, 1e6 + 1.0], 1e-3);
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn uniform_selection_passes_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let j = 8;
        let trials = 10_000;
        let mut counts = vec![0usize; j];
        for _ in 0..trials {
            counts[select_duplicate(&vec![0.7; j], 0.1, &mut rng)] += 1;
        }
        let e = trials as f64 / j as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 99th percentile of chi-square with 7 degrees of freedom.
        assert!(chi2 < 18.475, "chi2 = {chi2}");
    }

    #[test]
    fn systematic_resample_concentrates() {
        for u in [0.0, 0.3, 0.999] {
            assert_eq!(systematic_resample(&[1.0, 0.0, 0.0, 0.0], u), vec![0; 4]);
            assert_eq!(systematic_resample(&[0.0, 0.0, 0.0, 1.0], u), vec![3; 4]);
        }
        assert_eq!(systematic_resample(&[1.0, 1.0, 1.0, 1.0], 0.5), vec![0, 1, 2, 3]);
        assert_eq!(systematic_resample(&[0.5, 0.0, 0.5, 0.0], 0.5), vec![0, 0, 2, 2]);
    }

    #[test]
    fn nfe_closed_form() {
        let model = gaussian();
        let sched = VpSchedule::default();
        for (steps, j, every) in [(40, 4, 5), (23, 3, 4), (10, 16, 5)] {
            let counting = CountingModel::new(&model);
            let scfg = ScalingConfig {
                j,
                every,
                ..ScalingConfig::new(ScalingMode::SelfIs, false)
            };
            let k = 3;
            self_is_sample(&counting, &sched, 2, &guided(steps, 1), &scfg, 1.0, k, false).unwrap();
            assert_eq!(counting.evaluations(), k * (steps + steps / every * (j - 1)));
            assert_eq!(self_is_nfe(steps, j, every), steps + steps / every * (j - 1));
        }
    }

    #[test]
    fn single_duplicate_matches_plain_guidance() {
        let model = gaussian();
        let sched = VpSchedule::default();
        let cfg = guided(30, 5);
        let scfg = ScalingConfig {
            j: 1,
            ..ScalingConfig::new(ScalingMode::SelfIs, false)
        };
        let plain = guidance::sample(&model, &sched, 2, &cfg, 6, false).unwrap();
        let scaled = self_is_sample(&model, &sched, 2, &cfg, &scfg, 1.0, 6, false).unwrap();
        assert_eq!(plain, scaled);
    }

    #[test]
    fn gate_below_tau_is_plain_guidance() {
        let model = gaussian();
        let sched = VpSchedule::default();
        let cfg = guided(30, 5);
        let plain = guidance::sample(&model, &sched, 2, &cfg, 4, true).unwrap();
        for mode in [ScalingMode::SelfIs, ScalingMode::Fks] {
            let scfg = ScalingConfig::new(mode, false);
            let f = scfg.tau;
            let a = self_is_sample(&model, &sched, 2, &cfg, &scfg, f, 4, true).unwrap();
            let (b, _) = fks_sample(&model, &sched, 2, &cfg, &scfg, f, 4, true).unwrap();
            assert_eq!(a, plain);
            assert_eq!(b, plain);
        }
    }

    #[test]
    fn single_particle_fks_matches_plain_guidance() {
        let model = gaussian();
        let sched = VpSchedule::default();
        let cfg = guided(30, 8);
        let scfg = ScalingConfig::new(ScalingMode::Fks, false);
        let plain = guidance::sample(&model, &sched, 2, &cfg, 1, false).unwrap();
        let (fks, _) = fks_sample(&model, &sched, 2, &cfg, &scfg, 1.0, 1, false).unwrap();
        assert_eq!(plain, fks);
    }

    #[test]
    fn fks_running_best_never_increases() {
        let model = gaussian();
        let sched = VpSchedule::default();
        let cfg = GuidanceConfig::toward(vec![vec![0.0], vec![0.5]], 50, 2);
        let scfg = ScalingConfig {
            every: 2,
            ..ScalingConfig::new(ScalingMode::Fks, false)
        };
        let (_, trace) = fks_sample(&model, &sched, 2, &cfg, &scfg, 1.0, 16, false).unwrap();
        assert_eq!(trace.r_best.len(), 16);
        for h in &trace.r_best {
            assert_eq!(h.len(), 25);
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn self_is_is_deterministic_and_moves_toward_target() {
        let model = gaussian();
        let sched = VpSchedule::default();
        // Target below the data mean of the score coordinate.
        let cfg = GuidanceConfig::toward(vec![vec![0.0]], 60, 4);
        let scfg = ScalingConfig {
            j: 8,
            ..ScalingConfig::new(ScalingMode::SelfIs, false)
        };
        let a = self_is_sample(&model, &sched, 2, &cfg, &scfg, 1.0, 64, false).unwrap();
        let b = self_is_sample(&model, &sched, 2, &cfg, &scfg, 1.0, 64, false).unwrap();
        assert_eq!(a, b);
        let plain = guidance::sample(&model, &sched, 2, &cfg, 64, false).unwrap();
        let mean_dev = |o: &SampleOutput| {
            o.samples.iter().map(|g| g.state[2].abs()).sum::<f64>() / o.samples.len() as f64
        };
        assert!(mean_dev(&a) < mean_dev(&plain));
    }

    #[test]
    fn fidelity_closed_forms() {
        assert_eq!(fidelity_from_deviations(&[0.0, 0.0]), 1.0);
        assert!((fidelity_from_deviations(&[2f64.ln()]) - 0.5).abs() < 1e-12);
        assert!((fidelity_from_deviations(&[0.0, 2.0 * 2f64.ln()]) - 0.5).abs() < 1e-12);
        assert_eq!(fidelity_from_deviations(&[]), 0.0);
    }

    #[test]
    fn improvement_filter() {
        let train = vec![vec![0.2], vec![0.5]];
        let gen: Vec<&[f64]> = vec![&[0.1], &[0.3], &[f64::NAN]];
        assert_eq!(improving_indices(&gen, &train).unwrap(), vec![0]);
        let train = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let gen: Vec<&[f64]> = vec![&[0.5, 0.5], &[1.5, 1.5], &[0.0, 1.0], &[2.0, -1.0]];
        assert_eq!(improving_indices(&gen, &train).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn fidelity_in_unit_interval() {
        let model = gaussian();
        let sched = VpSchedule::default();
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let a = i as f64 / 20.0;
                vec![a, 1.0 - a, 0.5 + a / 4.0]
            })
            .collect();
        let rep = fidelity(&model, &sched, &rows, 2, 64, 40, 3).unwrap();
        assert!((0.0..=1.0).contains(&rep.fidelity));
        assert!(rep.kept > 0, "{rep:?}");
        assert_eq!(rep, fidelity(&model, &sched, &rows, 2, 64, 40, 3).unwrap());
    }

    proptest! {
        #[test]
        fn importance_is_a_distribution_favoring_small_rewards(
            rewards in prop::collection::vec(0.0f64..5.0, 1..20),
            alpha in 0.01f64..2.0,
        ) {
            let w = importance(&rewards, alpha);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..rewards.len() {
                for j in 0..rewards.len() {
                    if rewards[i] < rewards[j] {
                        prop_assert!(w[i] >= w[j]);
                    }
                }
            }
        }

        #[test]
        fn systematic_counts_stay_within_one_of_expectation(
            weights in prop::collection::vec(0.0f64..1.0, 1..30),
            u in 0.0f64..1.0,
        ) {
            let n = weights.len();
            let idx = systematic_resample(&weights, u);
            prop_assert_eq!(idx.len(), n);
            prop_assert!(idx.windows(2).all(|p| p[0] <= p[1]));
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                for (i, w) in weights.iter().enumerate() {
                    let count = idx.iter().filter(|&&a| a == i).count() as f64;
                    let expected = n as f64 * w / total;
                    prop_assert!((count - expected).abs() < 1.0 + 1e-9, "index {i}: {count} vs {expected}");
                }
            }
        }

        #[test]
        fn fidelity_is_one_only_without_deviation(raw in prop::collection::vec(0u8..30, 1..10)) {
            let devs: Vec<f64> = raw.iter().map(|&d| d as f64 / 10.0).collect();
            let f = fidelity_from_deviations(&devs);
            prop_assert!((0.0..=1.0).contains(&f));
            prop_assert_eq!(f == 1.0, devs.iter().all(|&d| d == 0.0));
        }
    }
}
