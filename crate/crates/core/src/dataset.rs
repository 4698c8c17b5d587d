//! Designs, score vectors, and the score-augmented offline dataset.
//!
//! Every objective is minimized internally. Maximization objectives are
//! negated at ingestion and `sense` records the mapping so results can be
//! reported back in the original orientation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// A point in design space, in task units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Design(Vec<f64>);

impl Design {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("design"));
        }
        finite(&values, "design")?;
        Ok(Design(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Objective values of one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("score vector"));
        }
        finite(&values, "score vector")?;
        Ok(ScoreVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Optimization direction of an objective as it appears in the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

impl Sense {
    /// Maps a value between the original orientation and the internal
    /// minimization orientation. Applying it twice is the identity.
    pub fn orient(self, y: f64) -> f64 {
        match self {
            Sense::Min => y,
            Sense::Max => -y,
        }
    }
}

/// A design concatenated with its score vector, design first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSample {
    pub design: Design,
    pub score: ScoreVector,
}

impl AugmentedSample {
    pub fn new(design: Design, score: ScoreVector) -> Self {
        AugmentedSample { design, score }
    }

    pub fn dim(&self) -> usize {
        self.design.len() + self.score.len()
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.extend_from_slice(self.design.as_slice());
        v.extend_from_slice(self.score.as_slice());
        v
    }

    /// Splits a flat `d + m` vector back into its design and score blocks.
    pub fn split(flat: &[f64], d: usize) -> Result<Self> {
        if d == 0 || flat.len() <= d {
            return Err(Error::DimensionMismatch {
                expected: d + 1,
                got: flat.len(),
            });
        }
        Ok(AugmentedSample {
            design: Design::new(flat[..d].to_vec())?,
            score: ScoreVector::new(flat[d..].to_vec())?,
        })
    }
}

/// The score-augmented offline dataset, all objectives in minimization sense.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub task_id: String,
    pub d: usize,
    pub m: usize,
    pub sense_original: Vec<Sense>,
    pub samples: Vec<AugmentedSample>,
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scores(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.score.as_slice().to_vec())
            .collect()
    }

    pub fn designs(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| s.design.as_slice().to_vec())
            .collect()
    }

    /// Scores in the orientation of the source data.
    pub fn original_scores(&self) -> Vec<Vec<f64>> {
        self.samples
            .iter()
            .map(|s| {
                s.score
                    .as_slice()
                    .iter()
                    .zip(&self.sense_original)
                    .map(|(&y, sense)| sense.orient(y))
                    .collect()
            })
            .collect()
    }
}

/// Builds a dataset from parallel design and score sequences given in their
/// original orientation. Maximization objectives are negated.
pub fn augment(
    task_id: &str,
    designs: Vec<Design>,
    scores: Vec<ScoreVector>,
    sense_original: &[Sense],
) -> Result<OfflineDataset> {
    if designs.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: designs.len(),
            got: scores.len(),
        });
    }
    let first = designs.first().ok_or(Error::Empty("dataset"))?;
    let d = first.len();
    let m = scores[0].len();
    if sense_original.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: sense_original.len(),
        });
    }
    let mut samples = Vec::with_capacity(designs.len());
    for (x, y) in designs.into_iter().zip(scores) {
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: x.len(),
            });
        }
        if y.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: y.len(),
            });
        }
        let oriented = y
            .as_slice()
            .iter()
            .zip(sense_original)
            .map(|(&v, s)| s.orient(v))
            .collect();
        samples.push(AugmentedSample::new(x, ScoreVector::new(oriented)?));
    }
    Ok(OfflineDataset {
        task_id: task_id.to_string(),
        d,
        m,
        sense_original: sense_original.to_vec(),
        samples,
    })
}

/// Per-coordinate min-max statistics.
///
/// A coordinate with `max == min` normalizes to 0 and denormalizes to `min`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Min-max statistics of the score block.
pub type ScoreStats = MinMax;

impl MinMax {
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut iter = rows.into_iter();
        let first = iter.next().ok_or(Error::Empty("rows"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in iter {
            crate::error::check_len(min.len(), row.len())?;
            for (j, &v) in row.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(MinMax { min, max })
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn range(&self, j: usize) -> f64 {
        self.max[j] - self.min[j]
    }

    pub fn normalize_value(&self, j: usize, v: f64) -> f64 {
        let r = self.range(j);
        if r > 0.0 {
            (v - self.min[j]) / r
        } else {
            0.0
        }
    }

    pub fn denormalize_value(&self, j: usize, v: f64) -> f64 {
        let r = self.range(j);
        if r > 0.0 {
            v * r + self.min[j]
        } else {
            self.min[j]
        }
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| self.normalize_value(j, v))
            .collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, &v)| self.denormalize_value(j, v))
            .collect()
    }
}

/// Maps every score coordinate onto [0, 1] using dataset extremes.
pub fn normalize_scores(dataset: &OfflineDataset) -> Result<(OfflineDataset, ScoreStats)> {
    if dataset.len() < 2 {
        return Err(Error::Empty("dataset needs at least two samples"));
    }
    let stats = MinMax::fit(dataset.samples.iter().map(|s| s.score.as_slice()))?;
    let mut out = dataset.clone();
    for s in &mut out.samples {
        s.score = ScoreVector::new(stats.normalize(s.score.as_slice()))?;
    }
    Ok((out, stats))
}

/// Maps every design coordinate onto [0, 1] using dataset extremes.
pub fn normalize_designs(dataset: &OfflineDataset) -> Result<(OfflineDataset, MinMax)> {
    if dataset.len() < 2 {
        return Err(Error::Empty("dataset needs at least two samples"));
    }
    let stats = MinMax::fit(dataset.samples.iter().map(|s| s.design.as_slice()))?;
    let mut out = dataset.clone();
    for s in &mut out.samples {
        s.design = Design::new(stats.normalize(s.design.as_slice()))?;
    }
    Ok((out, stats))
}

/// Design and score statistics used to move between task units and the
/// unit box the diffusion model is trained in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub design: MinMax,
    pub score: ScoreStats,
}

impl Normalizer {
    pub fn fit(dataset: &OfflineDataset) -> Result<Self> {
        let (_, design) = normalize_designs(dataset)?;
        let (_, score) = normalize_scores(dataset)?;
        Ok(Normalizer { design, score })
    }

    /// Flat normalized `d + m` rows of a dataset.
    pub fn transform(&self, dataset: &OfflineDataset) -> Vec<Vec<f64>> {
        dataset
            .samples
            .iter()
            .map(|s| {
                let mut row = self.design.normalize(s.design.as_slice());
                row.extend(self.score.normalize(s.score.as_slice()));
                row
            })
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.design.dim();
        (
            self.design.denormalize(&row[..d]),
            self.score.denormalize(&row[d..]),
        )
    }
}

/// Static description of an optimization task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub d: usize,
    pub m: usize,
    pub bounds: Vec<(f64, f64)>,
    pub sense_original: Vec<Sense>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub known_optimum: Option<ScoreVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pf_reference: Option<Vec<ScoreVector>>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(Error::InvalidConfig("task dimensions must be >= 1".into()));
        }
        crate::error::check_len(self.d, self.bounds.len())?;
        crate::error::check_len(self.m, self.sense_original.len())?;
        if let Some((j, _)) = self
            .bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo < hi))
        {
            return Err(Error::InvalidConfig(format!(
                "bounds for coordinate {j} must satisfy lo < hi"
            )));
        }
        if matches!(&self.pf_reference, Some(pf) if pf.is_empty()) {
            return Err(Error::Empty("pf_reference"));
        }
        Ok(())
    }

    pub fn check_bounds(&self, x: &[f64]) -> Result<()> {
        crate::error::check_len(self.d, x.len())?;
        for (index, (&value, &(lo, hi))) in x.iter().zip(&self.bounds).enumerate() {
            if !(lo..=hi).contains(&value) {
                return Err(Error::OutOfBounds {
                    index,
                    value,
                    lo,
                    hi,
                });
            }
        }
        Ok(())
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(&v, &(lo, hi))| v.clamp(lo, hi))
            .collect()
    }
}
