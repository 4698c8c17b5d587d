//! Trained model files.
//!
//! A checkpoint is one JSON document holding the network, its noise schedule,
//! the normalization fitted on the training data and the task description.
//! Its identity is the SHA-256 of the file bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Normalizer, Sense};
use crate::error::{check_len, Error, Result};
use crate::guidance::{self, GuidanceConfig, Prediction};
use crate::io::{self, TaskSidecar};
use crate::scorenet::{NetConfig, ScoreNetwork};
use crate::sde::VpSchedule;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub task: TaskSidecar,
    pub architecture: NetConfig,
    pub schedule: VpSchedule,
    pub normalizer: Normalizer,
    /// Normalized first front of the training scores (internal orientation).
    pub train_front: Vec<Vec<f64>>,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new(
        task: TaskSidecar,
        net: &ScoreNetwork,
        normalizer: Normalizer,
        train_front: Vec<Vec<f64>>,
        epochs: usize,
        final_loss: Option<f64>,
    ) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            task,
            architecture: *net.config(),
            schedule: *net.schedule(),
            normalizer,
            train_front,
            seed: net.seed(),
            epochs,
            final_loss,
            params: net.params().to_vec(),
        }
    }

    pub fn network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::from_parts(self.architecture, self.schedule, self.params.clone(), self.seed)
    }

    pub fn d(&self) -> usize {
        self.architecture.d
    }

    pub fn m(&self) -> usize {
        self.architecture.m
    }

    pub fn sense(&self) -> &[Sense] {
        &self.task.sense_original
    }

    /// Maps a normalized sample back to task units, scores in their
    /// original orientation.
    pub fn to_task_units(&self, state: &[f64]) -> Vec<f64> {
        let (mut x, y) = self.normalizer.inverse(state);
        x.extend(y.iter().zip(self.sense()).map(|(&v, s)| s.orient(v)));
        x
    }

    /// Normalizes preferred scores given in task units.
    pub fn normalize_targets(&self, targets: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        targets
            .iter()
            .map(|y| {
                check_len(self.m(), y.len())?;
                let internal: Vec<f64> = y.iter().zip(self.sense()).map(|(&v, s)| s.orient(v)).collect();
                Ok(self.normalizer.score.normalize(&internal))
            })
            .collect()
    }

    /// Predicts the score of a design given in task units. The returned
    /// prediction is in task units as well.
    pub fn predict(&self, net: &ScoreNetwork, design: &[f64], cfg: &GuidanceConfig) -> Result<Prediction> {
        check_len(self.d(), design.len())?;
        for (index, (&value, &(lo, hi))) in design.iter().zip(&self.task.bounds).enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(Error::OutOfBounds { index, value, lo, hi });
            }
        }
        let x_pref = self.normalizer.design.normalize(design);
        let p = guidance::predict_scores(net, &self.schedule, &x_pref, cfg)?;
        let score = self
            .normalizer
            .score
            .denormalize(&p.score)
            .iter()
            .zip(self.sense())
            .map(|(&v, s)| s.orient(v))
            .collect();
        Ok(Prediction {
            score,
            design: self.normalizer.design.denormalize(&p.design),
            converged: p.converged,
        })
    }

    /// Writes the checkpoint and returns its id.
    pub fn save(&self, path: &Path) -> Result<String> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        io::write_atomic(path, &bytes)?;
        Ok(io::sha256_hex(&bytes))
    }

    /// Reads a checkpoint and returns it with its id.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_slice(&bytes).map_err(|e| Error::schema(path, e.to_string()))?;
        if ck.format_version != FORMAT_VERSION {
            return Err(Error::schema(
                path,
                format!("unsupported format version {}", ck.format_version),
            ));
        }
        if ck.task.d != ck.architecture.d || ck.task.m != ck.architecture.m {
            return Err(Error::schema(path, "task and network dimensions disagree"));
        }
        ck.network().map_err(|e| Error::schema(path, e.to_string()))?;
        Ok((ck, io::sha256_hex(&bytes)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::MinMax;

    fn sample() -> Checkpoint {
        let cfg = NetConfig {
            hidden_width: 8,
            depth: 2,
            time_embed_dim: 4,
            ..NetConfig::new(2, 1)
        };
        let mut net = ScoreNetwork::init(cfg, VpSchedule::default(), 3).unwrap();
        net.params_mut()[0] = 1.0 / 3.0;
        let task = TaskSidecar {
            task_id: "branin".into(),
            d: 2,
            m: 1,
            sense_original: vec![Sense::Min],
            bounds: vec![(-5.0, 10.0), (0.0, 15.0)],
        };
        let normalizer = Normalizer {
            design: MinMax {
                min: vec![-5.0, 0.0],
                max: vec![10.0, 15.0],
            },
            score: MinMax {
                min: vec![0.4],
                max: vec![300.0],
            },
        };
        Checkpoint::new(task, &net, normalizer, vec![vec![0.0]], 5, Some(0.25))
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let ck = sample();
        let id = ck.save(&path).unwrap();
        let (back, id2) = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(id, id2);
        assert_eq!(back.network().unwrap().params(), ck.params.as_slice());
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut ck = sample();
        ck.params.pop();
        ck.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Schema { .. })));
    }
}
