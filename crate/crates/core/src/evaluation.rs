//! Scoring candidate designs with a task's true objectives.

use crate::bench::{pf_reference, Task};
use crate::error::{Error, Result};
use crate::pareto::{first_front, hypervolume, igd, EvalReport};

/// Default number of points in a discretized reference front.
pub const PF_RESOLUTION: usize = 200;

/// Reference point for hypervolume: training nadir plus 10% of each
/// coordinate's range.
pub fn reference_point(train_scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let m = train_scores.first().ok_or(Error::Empty("training scores"))?.len();
    Ok((0..m)
        .map(|j| {
            let (lo, hi) = train_scores
                .iter()
                .map(|y| y[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            hi + 0.1 * (hi - lo)
        })
        .collect())
}

/// Ground-truth reference set of a task: its discretized front, or its known
/// optimum for a single objective.
pub fn truth_reference(task: Task, resolution: usize) -> Result<Vec<Vec<f64>>> {
    if task.is_multi_objective() {
        Ok(pf_reference(task, resolution)?
            .into_iter()
            .map(|y| y.into_inner())
            .collect())
    } else {
        let opt = task
            .spec()
            .known_optimum
            .ok_or_else(|| Error::UnknownTask(format!("{task} has no known optimum")))?;
        Ok(vec![opt.into_inner()])
    }
}

/// True scores of designs after clipping them into the task bounds.
pub fn true_scores(task: Task, designs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let spec = task.spec();
    designs
        .iter()
        .map(|x| {
            if x.len() != spec.d {
                return Err(Error::DimensionMismatch {
                    expected: spec.d,
                    got: x.len(),
                });
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("candidate design"));
            }
            Ok(task.evaluate_unchecked(&spec.clip(x)))
        })
        .collect()
}

fn per_objective_min(points: &[Vec<f64>]) -> Vec<f64> {
    let m = points.first().map_or(0, Vec::len);
    (0..m)
        .map(|j| points.iter().map(|y| y[j]).fold(f64::INFINITY, f64::min))
        .collect()
}

/// Evaluates candidates against the training data's best front. Scores are in
/// the internal minimization orientation.
pub fn evaluate_designs(
    task: Task,
    designs: &[Vec<f64>],
    train_scores: &[Vec<f64>],
    resolution: usize,
    seed: u64,
) -> Result<EvalReport> {
    if designs.is_empty() {
        return Err(Error::Empty("candidate designs"));
    }
    let scores = true_scores(task, designs)?;
    evaluate_scores(task, &scores, train_scores, resolution, seed)
}

pub fn evaluate_scores(
    task: Task,
    scores: &[Vec<f64>],
    train_scores: &[Vec<f64>],
    resolution: usize,
    seed: u64,
) -> Result<EvalReport> {
    let truth = truth_reference(task, resolution)?;
    let reference = reference_point(train_scores)?;
    let front: Vec<Vec<f64>> = first_front(train_scores)?
        .into_iter()
        .map(|i| train_scores[i].clone())
        .collect();
    let hv = hypervolume(scores, &reference, seed)?;
    let train_hv = hypervolume(&front, &reference, seed)?;
    let cand_igd = igd(scores, &truth)?;
    let train_igd = igd(&front, &truth)?;
    let normalized = train_hv.value > 0.0 && train_igd > 0.0;
    let (normalized_hv, normalized_igd) = if normalized {
        (hv.value / train_hv.value, cand_igd / train_igd)
    } else {
        (hv.value, cand_igd)
    };
    Ok(EvalReport {
        task_id: task.id().to_string(),
        k: scores.len(),
        hv: hv.value,
        hv_std_error: hv.std_error,
        igd: cand_igd,
        normalized_hv,
        normalized_igd,
        normalized,
        reference_point: reference,
        train_best_hv: train_hv.value,
        train_best_igd: train_igd,
        best_scores: per_objective_min(scores),
        train_best_scores: per_objective_min(train_scores),
    })
}
