//! Pareto dominance, non-dominated sorting, hypervolume and IGD.
//!
//! All functions assume minimization.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Monte-Carlo sample count used for hypervolume with three or more objectives.
pub const HV_MC_SAMPLES: usize = 1_000_000;
const HV_MC_CHUNK: usize = 50_000;

pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(dominates_unchecked(a, b))
}

pub(crate) fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    let mut strict = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strict = true;
        }
    }
    strict
}

/// Front index (1-based) of every input point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontAssignment {
    pub front_of: Vec<usize>,
    pub front_count: usize,
}

impl FrontAssignment {
    /// Indices of the points on front `k` (1-based), in input order.
    pub fn front(&self, k: usize) -> Vec<usize> {
        self.front_of
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == k)
            .map(|(i, _)| i)
            .collect()
    }
}

fn check_points<P: AsRef<[f64]>>(points: &[P]) -> Result<usize> {
    let m = points.first().ok_or(Error::Empty("points"))?.as_ref().len();
    for p in points {
        crate::error::check_len(m, p.as_ref().len())?;
    }
    Ok(m)
}

/// Efficient non-dominated sort with binary search over fronts.
///
/// Points are visited in lexicographic order, so a point can only be
/// dominated by points visited before it, and "front `k` contains a point
/// dominating `p`" is monotone in `k`. Duplicates never dominate each other
/// and therefore share a front.
pub fn non_dominated_sort<P: AsRef<[f64]>>(points: &[P]) -> Result<FrontAssignment> {
    check_points(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (points[i].as_ref(), points[j].as_ref());
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    let mut front_of = vec![0; points.len()];
    for &i in &order {
        let p = points[i].as_ref();
        let dominated_by =
            |front: &Vec<usize>| front.iter().rev().any(|&q| dominates_unchecked(points[q].as_ref(), p));
        let k = fronts.partition_point(dominated_by);
        if k == fronts.len() {
            fronts.push(Vec::new());
        }
        fronts[k].push(i);
        front_of[i] = k + 1;
    }
    Ok(FrontAssignment {
        front_of,
        front_count: fronts.len(),
    })
}

/// Indices of the non-dominated points.
pub fn first_front<P: AsRef<[f64]>>(points: &[P]) -> Result<Vec<usize>> {
    Ok(non_dominated_sort(points)?.front(1))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvEstimate {
    pub value: f64,
    /// Zero for exact computations.
    pub std_error: f64,
}

fn contributing<'a, P: AsRef<[f64]>>(points: &'a [P], reference: &[f64]) -> Vec<&'a [f64]> {
    points
        .iter()
        .map(|p| p.as_ref())
        .filter(|p| p.iter().zip(reference).all(|(x, r)| x < r))
        .collect()
}

/// Hypervolume dominated by `points` inside the box bounded by `reference`.
///
/// Exact for one and two objectives; a seeded Monte-Carlo estimate with
/// [`HV_MC_SAMPLES`] draws otherwise. Points that are not strictly better
/// than the reference in every coordinate contribute nothing.
pub fn hypervolume<P: AsRef<[f64]>>(points: &[P], reference: &[f64], seed: u64) -> Result<HvEstimate> {
    if points.is_empty() {
        return Ok(HvEstimate {
            value: 0.0,
            std_error: 0.0,
        });
    }
    let m = check_points(points)?;
    crate::error::check_len(m, reference.len())?;
    match m {
        1 => {
            let best = contributing(points, reference)
                .iter()
                .map(|p| p[0])
                .fold(f64::INFINITY, f64::min);
            let value = if best.is_finite() { reference[0] - best } else { 0.0 };
            Ok(HvEstimate {
                value,
                std_error: 0.0,
            })
        }
        2 => Ok(HvEstimate {
            value: hypervolume_2d(points, reference),
            std_error: 0.0,
        }),
        _ => hypervolume_mc(points, reference, HV_MC_SAMPLES, seed),
    }
}

/// Exact two-objective sweep.
pub fn hypervolume_2d<P: AsRef<[f64]>>(points: &[P], reference: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = contributing(points, reference)
        .into_iter()
        .map(|p| (p[0], p[1]))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut staircase: Vec<(f64, f64)> = Vec::new();
    for p in pts {
        if staircase.last().map_or(true, |last| p.1 < last.1) {
            staircase.push(p);
        }
    }
    let mut area = 0.0;
    for (i, &(x, y)) in staircase.iter().enumerate() {
        let next_x = staircase.get(i + 1).map_or(reference[0], |p| p.0);
        area += (next_x - x) * (reference[1] - y);
    }
    area
}

/// Monte-Carlo hypervolume over the box spanned by the contributing points'
/// ideal corner and `reference`.
pub fn hypervolume_mc<P: AsRef<[f64]>>(
    points: &[P],
    reference: &[f64],
    samples: usize,
    seed: u64,
) -> Result<HvEstimate> {
    if samples == 0 {
        return Err(Error::InvalidConfig("Monte-Carlo sample count must be >= 1".into()));
    }
    let m = reference.len();
    let pts = contributing(points, reference);
    if pts.is_empty() {
        return Ok(HvEstimate {
            value: 0.0,
            std_error: 0.0,
        });
    }
    for p in &pts {
        crate::error::check_len(m, p.len())?;
    }
    let mut lower = reference.to_vec();
    for p in &pts {
        for j in 0..m {
            lower[j] = lower[j].min(p[j]);
        }
    }
    let volume: f64 = lower.iter().zip(reference).map(|(l, r)| r - l).product();
    let chunks = samples.div_ceil(HV_MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(&[seed, 0x4856, c as u64]);
            let n = HV_MC_CHUNK.min(samples - c * HV_MC_CHUNK);
            let mut z = vec![0.0; m];
            let mut hits = 0usize;
            for _ in 0..n {
                for j in 0..m {
                    z[j] = lower[j] + rng.gen::<f64>() * (reference[j] - lower[j]);
                }
                if pts.iter().any(|p| p.iter().zip(&z).all(|(a, b)| a <= b)) {
                    hits += 1;
                }
            }
            hits
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let frac = hits as f64 / samples as f64;
    Ok(HvEstimate {
        value: frac * volume,
        std_error: volume * (frac * (1.0 - frac) / samples as f64).sqrt(),
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance from each reference-front point to its nearest candidate.
pub fn igd<P: AsRef<[f64]>, Q: AsRef<[f64]>>(candidates: &[P], pf_reference: &[Q]) -> Result<f64> {
    let m = check_points(candidates)?;
    let m_ref = check_points(pf_reference)?;
    crate::error::check_len(m, m_ref)?;
    let total: f64 = pf_reference
        .iter()
        .map(|r| {
            candidates
                .iter()
                .map(|c| distance(c.as_ref(), r.as_ref()))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / pf_reference.len() as f64)
}

/// Candidate-set quality against task references.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task_id: String,
    pub k: usize,
    pub hv: f64,
    pub hv_std_error: f64,
    pub igd: f64,
    pub normalized_hv: f64,
    pub normalized_igd: f64,
    /// False when a zero denominator forced raw values into the normalized fields.
    pub normalized: bool,
    pub reference_point: Vec<f64>,
    pub train_best_hv: f64,
    pub train_best_igd: f64,
    /// Per-objective best true score among the candidates.
    pub best_scores: Vec<f64>,
    /// Per-objective best score in the training data.
    pub train_best_scores: Vec<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "task_id,k,hv,hv_std_error,igd,normalized_hv,normalized_igd,normalized,train_best_hv,train_best_igd";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.task_id,
            self.k,
            self.hv,
            self.hv_std_error,
            self.igd,
            self.normalized_hv,
            self.normalized_igd,
            self.normalized,
            self.train_best_hv,
            self.train_best_igd
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Repeatedly peel off the points nobody dominates.
    fn peel_oracle(points: &[Vec<f64>]) -> Vec<usize> {
        let mut front = vec![0; points.len()];
        let mut remaining: Vec<usize> = (0..points.len()).collect();
        let mut k = 0;
        while !remaining.is_empty() {
            k += 1;
            let layer: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| {
                    !remaining
                        .iter()
                        .any(|&j| dominates_unchecked(&points[j], &points[i]))
                })
                .collect();
            for &i in &layer {
                front[i] = k;
            }
            remaining.retain(|i| !layer.contains(i));
        }
        front
    }

    #[test]
    fn dominance_cases() {
        assert!(dominates(&[0.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!(!dominates(&[0.0, 1.0], &[1.0, 0.0]).unwrap());
        assert!(!dominates(&[1.0, 0.0], &[0.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(dominates(&[1.0, 0.0], &[1.0, 1.0]).unwrap());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn sort_small_cases() {
        let one = non_dominated_sort(&[vec![3.0, 4.0]]).unwrap();
        assert_eq!(one.front_of, vec![1]);
        assert_eq!(one.front_count, 1);

        let pts = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let fa = non_dominated_sort(&pts).unwrap();
        assert_eq!(fa.front_of, vec![1, 1, 2]);
        assert_eq!(fa.front_count, 2);
        assert!(non_dominated_sort::<Vec<f64>>(&[]).is_err());
    }

    #[test]
    fn duplicates_share_a_front() {
        let pts = vec![vec![1.0, 1.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![2.0, 2.0]];
        assert_eq!(non_dominated_sort(&pts).unwrap().front_of, vec![1, 1, 2, 2]);
    }

    #[test]
    fn sort_matches_oracle_on_uniform_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..3).map(|_| rng.gen::<f64>()).collect())
            .collect();
        assert_eq!(non_dominated_sort(&pts).unwrap().front_of, peel_oracle(&pts));
    }

    #[test]
    fn hypervolume_fixtures() {
        let hv = hypervolume(&[vec![1.0, 1.0]], &[2.0, 2.0], 0).unwrap();
        assert_eq!(hv.value, 1.0);
        let hv = hypervolume(&[vec![0.0, 2.0], vec![2.0, 0.0]], &[3.0, 3.0], 0).unwrap();
        assert!((hv.value - 5.0).abs() < 1e-9);
        let hv = hypervolume(&[vec![5.0, 5.0]], &[3.0, 3.0], 0).unwrap();
        assert_eq!(hv.value, 0.0);
        let hv = hypervolume(&[vec![1.0], vec![0.5]], &[2.0], 0).unwrap();
        assert_eq!(hv.value, 1.5);
    }

    #[test]
    fn two_point_fixture_matches_monte_carlo() {
        let pts = [vec![0.0, 2.0], vec![2.0, 0.0]];
        let mc = hypervolume_mc(&pts, &[3.0, 3.0], 1_000_000, 17).unwrap();
        assert!((mc.value - 5.0).abs() <= 3.0 * mc.std_error);
    }

    #[test]
    fn three_objective_unit_cube_corner() {
        // A single point at the origin dominates the whole reference box.
        let hv = hypervolume(&[vec![0.0, 0.0, 0.0]], &[1.0, 1.0, 1.0], 3).unwrap();
        assert_eq!(hv.value, 1.0);
        let hv = hypervolume(
            &[vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5], vec![0.5, 0.5, 0.0]],
            &[1.0, 1.0, 1.0],
            3,
        )
        .unwrap();
        // Union of three 1 x 0.5 x 0.5 slabs: 3 * 0.25 - 3 * 0.125 + 0.125 = 0.5
        // measured inside the 1 x 1 x 1 box.
        assert!((hv.value - 0.5).abs() <= 4.0 * hv.std_error);
    }

    #[test]
    fn igd_cases() {
        let pf = [vec![0.0, 1.0], vec![1.0, 0.0]];
        assert_eq!(igd(&pf, &pf).unwrap(), 0.0);
        let v = igd(&[vec![0.0, 1.0]], &pf).unwrap();
        assert!((v - 0.5 * 2f64.sqrt()).abs() < 1e-12);
        assert!((v - 0.70711).abs() < 1e-5);
        assert!(igd::<Vec<f64>, Vec<f64>>(&[], &pf).is_err());
    }

    fn point_set(m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(0.0f64..1.0, m), 1..30)
    }

    proptest! {
        #[test]
        fn dominance_is_a_strict_partial_order(
            a in prop::collection::vec(0u8..3, 3),
            b in prop::collection::vec(0u8..3, 3),
            c in prop::collection::vec(0u8..3, 3),
        ) {
            let f = |v: &Vec<u8>| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            let (a, b, c) = (f(&a), f(&b), f(&c));
            prop_assert!(!dominates_unchecked(&a, &a));
            prop_assert!(!(dominates_unchecked(&a, &b) && dominates_unchecked(&b, &a)));
            if dominates_unchecked(&a, &b) && dominates_unchecked(&b, &c) {
                prop_assert!(dominates_unchecked(&a, &c));
            }
        }

        #[test]
        fn sort_agrees_with_oracle(pts in point_set(2)) {
            // Coarse grid values force ties and duplicates.
            let pts: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|v| (v * 4.0).floor()).collect()).collect();
            prop_assert_eq!(non_dominated_sort(&pts).unwrap().front_of, peel_oracle(&pts));
        }

        #[test]
        fn adding_points_never_decreases_hv(pts in point_set(2), extra in prop::collection::vec(0.0f64..1.0, 2)) {
            let r = [1.1, 1.1];
            let before = hypervolume_2d(&pts, &r);
            let mut more = pts.clone();
            more.push(extra);
            prop_assert!(hypervolume_2d(&more, &r) >= before - 1e-12);
        }

        #[test]
        fn adding_candidates_never_increases_igd(
            cands in point_set(2),
            pf in point_set(2),
            extra in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            let before = igd(&cands, &pf).unwrap();
            let mut more = cands.clone();
            more.push(extra);
            prop_assert!(igd(&more, &pf).unwrap() <= before + 1e-12);
        }
    }
}
