//! Score-reweighted denoising score matching.

use std::io::Write;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::OfflineDataset;
use crate::error::{Error, Result};
use crate::pareto::non_dominated_sort;
use crate::rng;
use crate::scorenet::ScoreNetwork;

/// Lower cutoff of the training time distribution.
pub const T_EPS: f64 = 1e-3;
const WARMUP_FRACTION: f64 = 0.1;
const FINAL_LR_DIVISOR: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_peak: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 800,
            batch_size: 128,
            lr_peak: 5e-5,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::InvalidConfig("lr_peak must be > 0".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Per-sample loss weights in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleWeights(pub Vec<f64>);

/// Better samples get larger weights: min-max of the score for one
/// objective, of the non-dominated front index for several.
pub fn compute_weights(dataset: &OfflineDataset) -> Result<SampleWeights> {
    if dataset.len() < 2 {
        return Err(Error::Empty("dataset needs at least two samples"));
    }
    let scores = dataset.scores();
    let weights = if dataset.m == 1 {
        let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
            (lo.min(y[0]), hi.max(y[0]))
        });
        if hi > lo {
            scores.iter().map(|y| (hi - y[0]) / (hi - lo)).collect()
        } else {
            vec![1.0; scores.len()]
        }
    } else {
        let fronts = non_dominated_sort(&scores)?;
        let total = fronts.front_count as f64;
        if fronts.front_count > 1 {
            fronts
                .front_of
                .iter()
                .map(|&l| (total - l as f64) / (total - 1.0))
                .collect()
        } else {
            vec![1.0; scores.len()]
        }
    };
    Ok(SampleWeights(weights))
}

/// Linear warmup, then cosine decay to `lr_peak / 25`.
pub fn learning_rate(step: usize, total_steps: usize, lr_peak: f64) -> f64 {
    let warmup = ((total_steps as f64 * WARMUP_FRACTION).ceil() as usize).max(1);
    let floor = lr_peak / FINAL_LR_DIVISOR;
    if step < warmup {
        return lr_peak * (step + 1) as f64 / warmup as f64;
    }
    let span = (total_steps - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    floor + 0.5 * (lr_peak - floor) * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,mean_loss,lr")?;
        for r in &self.epochs {
            writeln!(w, "{},{},{}", r.epoch, r.mean_loss, r.lr)?;
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.mean_loss)
    }
}

/// Trains on an already-normalized dataset with score-based sample weights.
pub fn train(
    dataset: &OfflineDataset,
    cfg: &TrainConfig,
    net0: ScoreNetwork,
) -> Result<(ScoreNetwork, TrainLog)> {
    let weights = compute_weights(dataset)?;
    let rows: Vec<Vec<f64>> = dataset.samples.iter().map(|s| s.concat()).collect();
    train_rows(&rows, &weights.0, cfg, net0, |_| {})
}

/// Trains on normalized `d + m` rows with the given per-row weights.
///
/// Every epoch visits the rows once in a seeded random order. For each row
/// a time `t ~ U(T_EPS, 1]` and a noise vector are drawn, the sample is
/// perturbed with the forward kernel, and the weighted loss is minimized
/// one batch at a time.
pub fn train_rows(
    rows: &[Vec<f64>],
    weights: &[f64],
    cfg: &TrainConfig,
    mut net: ScoreNetwork,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ScoreNetwork, TrainLog)> {
    cfg.validate()?;
    let n = rows.len();
    if n == 0 {
        return Err(Error::Empty("training rows"));
    }
    crate::error::check_len(n, weights.len())?;
    let dim = net.config().io_dim();
    for r in rows {
        crate::error::check_len(dim, r.len())?;
    }
    let schedule = *net.schedule();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut opt = AdamW::new(net.params().len(), cfg.weight_decay);
    let mut log = TrainLog::default();
    let mut last_good = net.clone();
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(&[cfg.seed, 0x7EA1, epoch as u64]);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut xs = Array2::zeros((b, dim));
            let mut targets = Array2::zeros((b, dim));
            let mut ts = Vec::with_capacity(b);
            let mut ws = Vec::with_capacity(b);
            let mut noise = vec![0.0; dim];
            for (r, &i) in batch.iter().enumerate() {
                let t = T_EPS + (1.0 - T_EPS) * (1.0 - rng.gen::<f64>());
                for e in noise.iter_mut() {
                    *e = StandardNormal.sample(&mut rng);
                }
                let (xt, target) = schedule.perturb(&rows[i], t, &noise)?;
                for j in 0..dim {
                    xs[[r, j]] = xt[j];
                    targets[[r, j]] = target[j];
                }
                ts.push(t);
                ws.push(weights[i]);
            }
            let (loss, grad) = net.loss_grad_rows(xs.view(), &ts, targets.view(), &ws);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    checkpoint: Box::new(last_good),
                });
            }
            lr = learning_rate(step, total_steps, cfg.lr_peak);
            last_good = net.clone();
            opt.step(net.params_mut(), &grad, lr);
            loss_sum += loss * b as f64;
            step += 1;
        }
        let record = EpochRecord {
            epoch,
            mean_loss: loss_sum / n as f64,
            lr,
        };
        on_epoch(&record);
        log.epochs.push(record);
    }
    Ok((net, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pareto::dominates;
    use proptest::prelude::*;
    use crate::dataset::{augment, Design, ScoreVector, Sense};
    use crate::scorenet::NetConfig;
    use crate::sde::VpSchedule;

    fn dataset(scores: &[Vec<f64>]) -> OfflineDataset {
        let m = scores[0].len();
        let designs = (0..scores.len())
            .map(|i| Design::new(vec![i as f64]).unwrap())
            .collect();
        let ys = scores
            .iter()
            .map(|y| ScoreVector::new(y.clone()).unwrap())
            .collect();
        augment("t", designs, ys, &vec![Sense::Min; m]).unwrap()
    }

    #[test]
    fn single_objective_weights() {
        let w = compute_weights(&dataset(&[vec![0.0], vec![1.0], vec![2.0]])).unwrap();
        assert_eq!(w.0, vec![1.0, 0.5, 0.0]);
        let w = compute_weights(&dataset(&[vec![3.0], vec![3.0]])).unwrap();
        assert_eq!(w.0, vec![1.0, 1.0]);
    }

    #[test]
    fn front_weights_with_four_fronts() {
        // A diagonal chain: every point dominates the next, so four fronts.
        let ds = dataset(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]);
        let w = compute_weights(&ds).unwrap();
        assert_eq!(w.0[0], 1.0);
        assert_eq!(w.0[3], 0.0);
        assert!((w.0[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_front_gets_uniform_weights() {
        let ds = dataset(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(compute_weights(&ds).unwrap().0, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn learning_rate_shape() {
        let total = 1000;
        let peak = 1e-3;
        assert!(learning_rate(0, total, peak) < peak);
        assert!((learning_rate(99, total, peak) - peak).abs() < 1e-15);
        assert!((learning_rate(total, total, peak) - peak / 25.0).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 100..total {
            let lr = learning_rate(s, total, peak);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    fn tiny_rows() -> (Vec<Vec<f64>>, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..64)
            .map(|i| {
                let x = i as f64 / 63.0;
                vec![x, x * x]
            })
            .collect();
        let w = vec![1.0; rows.len()];
        (rows, w)
    }

    fn tiny_net() -> ScoreNetwork {
        let cfg = NetConfig {
            d: 1,
            m: 1,
            hidden_width: 16,
            depth: 2,
            time_embed_dim: 8,
        };
        ScoreNetwork::init(cfg, VpSchedule::default(), 1).unwrap()
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (rows, w) = tiny_rows();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            lr_peak: 1e-3,
            ..TrainConfig::default()
        };
        let (a, la) = train_rows(&rows, &w, &cfg, tiny_net(), |_| {}).unwrap();
        let (b, lb) = train_rows(&rows, &w, &cfg, tiny_net(), |_| {}).unwrap();
        assert_eq!(la, lb);
        assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn training_reduces_loss() {
        let (rows, w) = tiny_rows();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 16,
            lr_peak: 3e-3,
            ..TrainConfig::default()
        };
        let (_, log) = train_rows(&rows, &w, &cfg, tiny_net(), |_| {}).unwrap();
        let first = log.epochs[0].mean_loss;
        let last = log.final_loss().unwrap();
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn divergence_returns_last_finite_network() {
        let (mut rows, w) = tiny_rows();
        rows[3][0] = f64::MAX;
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 64,
            lr_peak: 1e-3,
            ..TrainConfig::default()
        };
        let net = tiny_net();
        match train_rows(&rows, &w, &cfg, net.clone(), |_| {}) {
            Err(Error::Divergence { epoch, checkpoint }) => {
                assert_eq!(epoch, 0);
                assert_eq!(checkpoint.params(), net.params());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn weights_are_bounded_and_dominance_consistent(
            raw in prop::collection::vec(prop::collection::vec(0u8..5, 2), 2..40),
        ) {
            let scores: Vec<Vec<f64>> = raw.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
            let w = compute_weights(&dataset(&scores)).unwrap().0;
            prop_assert!(w.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prop_assert!(w.iter().any(|&v| v == 1.0));
            for a in 0..scores.len() {
                for b in 0..scores.len() {
                    if dominates(&scores[a], &scores[b]).unwrap() {
                        prop_assert!(w[a] >= w[b]);
                    }
                }
            }
        }

        #[test]
        fn single_objective_best_gets_unit_weight(ys in prop::collection::vec(-50.0f64..50.0, 2..40)) {
            let scores: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y]).collect();
            let w = compute_weights(&dataset(&scores)).unwrap().0;
            let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
            for (y, v) in ys.iter().zip(&w) {
                prop_assert!((0.0..=1.0).contains(v));
                if *y == best {
                    prop_assert_eq!(*v, 1.0);
                }
            }
        }
    }
}
