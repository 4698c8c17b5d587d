//! Synthetic benchmark tasks with analytic Pareto fronts.
//!
//! ZDT tasks use six design variables and DTLZ tasks seven variables with
//! three objectives.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::{augment, Design, OfflineDataset, ScoreVector, Sense, TaskSpec};
use crate::error::{Error, Result};
use crate::pareto::{self, non_dominated_sort};
use crate::rng;

pub const ZDT_DIM: usize = 6;
pub const DTLZ_DIM: usize = 7;
pub const DTLZ_OBJECTIVES: usize = 3;
/// Minimum of the Branin function.
pub const BRANIN_MIN: f64 = 0.397_887_357_729_738_2;

/// Disconnected f1 intervals of the ZDT3 front.
const ZDT3_SEGMENTS: [(f64, f64); 5] = [
    (0.0, 0.083_001_534_9),
    (0.182_228_780, 0.257_762_363_4),
    (0.409_313_674_8, 0.453_882_104_1),
    (0.618_396_794_4, 0.652_511_703_8),
    (0.823_331_798_3, 0.851_832_865_4),
];

/// Per-coordinate intervals of the DTLZ7 front in its first two objectives.
const DTLZ7_SEGMENTS: [(f64, f64); 2] = [(0.0, 0.251_411_836_0), (0.631_626_530_7, 0.859_400_856_6)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Branin,
    OmniTest,
    Zdt1,
    Zdt2,
    Zdt3,
    Dtlz2,
    Dtlz7,
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::Branin,
        Task::OmniTest,
        Task::Zdt1,
        Task::Zdt2,
        Task::Zdt3,
        Task::Dtlz2,
        Task::Dtlz7,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Task::Branin => "branin",
            Task::OmniTest => "omnitest",
            Task::Zdt1 => "zdt1",
            Task::Zdt2 => "zdt2",
            Task::Zdt3 => "zdt3",
            Task::Dtlz2 => "dtlz2",
            Task::Dtlz7 => "dtlz7",
        }
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            Task::Branin => (2, 1),
            Task::OmniTest => (2, 2),
            Task::Zdt1 | Task::Zdt2 | Task::Zdt3 => (ZDT_DIM, 2),
            Task::Dtlz2 | Task::Dtlz7 => (DTLZ_DIM, DTLZ_OBJECTIVES),
        }
    }

    pub fn bounds(self) -> Vec<(f64, f64)> {
        match self {
            Task::Branin => vec![(-5.0, 10.0), (0.0, 15.0)],
            Task::OmniTest => vec![(0.0, 6.0); 2],
            _ => vec![(0.0, 1.0); self.dims().0],
        }
    }

    pub fn is_multi_objective(self) -> bool {
        self.dims().1 > 1
    }

    pub fn spec(self) -> TaskSpec {
        let (d, m) = self.dims();
        TaskSpec {
            task_id: self.id().to_string(),
            d,
            m,
            bounds: self.bounds(),
            sense_original: vec![Sense::Min; m],
            known_optimum: match self {
                Task::Branin => Some(ScoreVector::new(vec![BRANIN_MIN]).expect("finite")),
                _ => None,
            },
            pf_reference: None,
        }
    }

    /// Objective values without a bounds check.
    pub fn evaluate_unchecked(self, x: &[f64]) -> Vec<f64> {
        match self {
            Task::Branin => vec![branin(x[0], x[1])],
            Task::OmniTest => {
                let f1 = x.iter().map(|&v| (PI * v).sin()).sum();
                let f2 = x.iter().map(|&v| (PI * v).cos()).sum();
                vec![f1, f2]
            }
            Task::Zdt1 | Task::Zdt2 | Task::Zdt3 => {
                let f1 = x[0];
                let g = 1.0 + 9.0 * x[1..].iter().sum::<f64>() / (x.len() - 1) as f64;
                let r = f1 / g;
                let h = match self {
                    Task::Zdt1 => 1.0 - r.sqrt(),
                    Task::Zdt2 => 1.0 - r * r,
                    _ => 1.0 - r.sqrt() - r * (10.0 * PI * f1).sin(),
                };
                vec![f1, g * h]
            }
            Task::Dtlz2 => {
                let m = DTLZ_OBJECTIVES;
                let g: f64 = x[m - 1..].iter().map(|v| (v - 0.5) * (v - 0.5)).sum();
                let mut f = vec![1.0 + g; m];
                for (i, fi) in f.iter_mut().enumerate() {
                    for &xj in &x[..m - 1 - i] {
                        *fi *= (xj * PI / 2.0).cos();
                    }
                    if i > 0 {
                        *fi *= (x[m - 1 - i] * PI / 2.0).sin();
                    }
                }
                f
            }
            Task::Dtlz7 => {
                let m = DTLZ_OBJECTIVES;
                let k = x.len() - m + 1;
                let g = 1.0 + 9.0 * x[m - 1..].iter().sum::<f64>() / k as f64;
                let mut f: Vec<f64> = x[..m - 1].to_vec();
                let h = m as f64
                    - f.iter()
                        .map(|&fi| fi / (1.0 + g) * (1.0 + (3.0 * PI * fi).sin()))
                        .sum::<f64>();
                f.push((1.0 + g) * h);
                f
            }
        }
    }

    pub fn evaluate(self, x: &[f64]) -> Result<Vec<f64>> {
        self.spec().check_bounds(x)?;
        Ok(self.evaluate_unchecked(x))
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.id() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownTask(s.to_string()))
    }
}

fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let (r, s, t) = (6.0, 10.0, 1.0 / (8.0 * PI));
    let q = x2 - b * x1 * x1 + c * x1 - r;
    q * q + s * (1.0 - t) * x1.cos() + s
}

pub fn eval_task(task_id: &str, x: &Design) -> Result<ScoreVector> {
    let task: Task = task_id.parse()?;
    ScoreVector::new(task.evaluate(x.as_slice())?)
}

/// `n` designs drawn uniformly inside the task bounds.
pub fn draw_designs(task: Task, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let bounds = task.bounds();
    let mut rng = rng::stream(&[seed, 0xDA7A]);
    (0..n)
        .map(|_| bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..hi)).collect())
        .collect()
}

/// Indices of the best `count` samples, whole fronts first.
///
/// Single-objective scores are ranked directly; multi-objective scores are
/// removed front by front with the last, partial front thinned at random.
pub fn best_fraction_indices(scores: &[Vec<f64>], count: usize, seed: u64) -> Result<Vec<usize>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let m = scores.first().ok_or(Error::Empty("scores"))?.len();
    if m == 1 {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a][0].total_cmp(&scores[b][0]).then(a.cmp(&b)));
        order.truncate(count);
        return Ok(order);
    }
    let fronts = non_dominated_sort(scores)?;
    let mut by_front: Vec<Vec<usize>> = vec![Vec::new(); fronts.front_count];
    for (i, &f) in fronts.front_of.iter().enumerate() {
        by_front[f - 1].push(i);
    }
    let mut removed = Vec::with_capacity(count);
    let mut rng = rng::stream(&[seed, 0xF407]);
    for mut front in by_front {
        let left = count - removed.len();
        if front.len() <= left {
            removed.extend(front);
        } else {
            front.shuffle(&mut rng);
            removed.extend_from_slice(&front[..left]);
        }
        if removed.len() == count {
            break;
        }
    }
    Ok(removed)
}

/// Uniform offline dataset with the best `removal_fraction` of samples removed.
pub fn generate_dataset(task: Task, n: usize, removal_fraction: f64, seed: u64) -> Result<OfflineDataset> {
    if n < 10 {
        return Err(Error::InvalidConfig(format!("dataset size must be >= 10, got {n}")));
    }
    if !(0.0..1.0).contains(&removal_fraction) {
        return Err(Error::InvalidConfig(format!(
            "removal fraction must be in [0, 1), got {removal_fraction}"
        )));
    }
    let designs = draw_designs(task, n, seed);
    let scores: Vec<Vec<f64>> = designs.iter().map(|x| task.evaluate_unchecked(x)).collect();
    let remove = (removal_fraction * n as f64).round() as usize;
    if n - remove < 2 {
        return Err(Error::RemovalTooLarge(n - remove));
    }
    let mut keep = vec![true; n];
    for i in best_fraction_indices(&scores, remove, seed)? {
        keep[i] = false;
    }
    let mut xs = Vec::with_capacity(n - remove);
    let mut ys = Vec::with_capacity(n - remove);
    for ((x, y), k) in designs.into_iter().zip(scores).zip(keep) {
        if k {
            xs.push(Design::new(x)?);
            ys.push(ScoreVector::new(y)?);
        }
    }
    augment(task.id(), xs, ys, &task.spec().sense_original)
}

fn spread(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| {
        if n == 1 {
            lo
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    })
}

fn segment_grid(segments: &[(f64, f64)], total: usize) -> Vec<f64> {
    let len: f64 = segments.iter().map(|(a, b)| b - a).sum();
    segments
        .iter()
        .flat_map(|&(a, b)| {
            let n = ((total as f64 * (b - a) / len).round() as usize).max(2);
            spread(a, b, n)
        })
        .collect()
}

/// Keeps the non-dominated points, then thins them evenly to `resolution`.
fn finalize_front(points: Vec<Vec<f64>>, resolution: usize) -> Result<Vec<ScoreVector>> {
    let front: Vec<Vec<f64>> = pareto::first_front(&points)?
        .into_iter()
        .map(|i| points[i].clone())
        .collect();
    let picked: Vec<Vec<f64>> = if front.len() <= resolution {
        front
    } else if resolution == 1 {
        vec![front[0].clone()]
    } else {
        (0..resolution)
            .map(|i| front[i * (front.len() - 1) / (resolution - 1)].clone())
            .collect()
    };
    picked.into_iter().map(ScoreVector::new).collect()
}

/// Discretized analytic Pareto front of a multi-objective task.
pub fn pf_reference(task: Task, resolution: usize) -> Result<Vec<ScoreVector>> {
    if !task.is_multi_objective() {
        return Err(Error::NotMultiObjective(task.id().to_string()));
    }
    if resolution == 0 {
        return Err(Error::InvalidConfig("resolution must be >= 1".into()));
    }
    let pts: Vec<Vec<f64>> = match task {
        Task::Zdt1 => spread(0.0, 1.0, resolution).map(|f| vec![f, 1.0 - f.sqrt()]).collect(),
        Task::Zdt2 => spread(0.0, 1.0, resolution).map(|f| vec![f, 1.0 - f * f]).collect(),
        Task::OmniTest => spread(1.0, 1.5, resolution)
            .map(|u| vec![2.0 * (PI * u).sin(), 2.0 * (PI * u).cos()])
            .collect(),
        Task::Zdt3 => segment_grid(&ZDT3_SEGMENTS, resolution * 8)
            .into_iter()
            .map(|f| vec![f, 1.0 - f.sqrt() - f * (10.0 * PI * f).sin()])
            .collect(),
        Task::Dtlz2 => {
            let side = (resolution as f64).sqrt().ceil() as usize;
            let mut pts = Vec::with_capacity(side * side);
            for a in spread(0.0, 1.0, side) {
                for b in spread(0.0, 1.0, side) {
                    let (ca, sa) = ((a * PI / 2.0).cos(), (a * PI / 2.0).sin());
                    let (cb, sb) = ((b * PI / 2.0).cos(), (b * PI / 2.0).sin());
                    pts.push(vec![ca * cb, ca * sb, sa]);
                }
            }
            pts
        }
        Task::Dtlz7 => {
            let side = ((resolution * 4) as f64).sqrt().ceil() as usize;
            let grid = segment_grid(&DTLZ7_SEGMENTS, side);
            let mut pts = Vec::with_capacity(grid.len() * grid.len());
            for &a in &grid {
                for &b in &grid {
                    let mut x = vec![0.0; DTLZ_DIM];
                    x[0] = a;
                    x[1] = b;
                    pts.push(Task::Dtlz7.evaluate_unchecked(&x));
                }
            }
            pts
        }
        Task::Branin => unreachable!("single objective"),
    };
    finalize_front(pts, resolution)
}

/// Task spec with the discretized front attached for multi-objective tasks.
pub fn task_spec_with_front(task: Task, resolution: usize) -> Result<TaskSpec> {
    let mut spec = task.spec();
    if task.is_multi_objective() {
        spec.pf_reference = Some(pf_reference(task, resolution)?);
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn branin_three_minima() {
        for (x1, x2) in [(-PI, 12.275), (PI, 2.275), (9.42478, 2.475)] {
            let y = Task::Branin.evaluate(&[x1, x2]).unwrap()[0];
            assert!(close(y, 0.3979, 1e-3), "({x1}, {x2}) -> {y}");
        }
        assert!(close(BRANIN_MIN, 0.398, 1e-3));
    }

    #[test]
    fn omnitest_values() {
        let f = Task::OmniTest.evaluate(&[0.0, 0.0]).unwrap();
        assert!(close(f[0], 0.0, 1e-12) && close(f[1], 2.0, 1e-12));
        let f = Task::OmniTest.evaluate(&[1.5, 1.5]).unwrap();
        assert!(close(f[0], -2.0, 1e-12) && close(f[1], 0.0, 1e-12));
        let f = Task::OmniTest.evaluate(&[1.0, 1.0]).unwrap();
        assert!(close(f[0], 0.0, 1e-12) && close(f[1], -2.0, 1e-12));
    }

    #[test]
    fn omnitest_stays_in_disk() {
        for x in draw_designs(Task::OmniTest, 2000, 4) {
            let f = Task::OmniTest.evaluate_unchecked(&x);
            assert!(f[0] * f[0] + f[1] * f[1] <= 8.0 + 1e-12);
            assert!(f.iter().all(|v| v.abs() <= 2.0 + 1e-12));
        }
    }

    #[test]
    fn out_of_bounds_is_rejected() {
        assert!(matches!(
            Task::Branin.evaluate(&[11.0, 0.0]),
            Err(Error::OutOfBounds { index: 0, .. })
        ));
        let x = Design::new(vec![0.5; 6]).unwrap();
        assert_eq!(eval_task("zdt1", &x).unwrap().len(), 2);
        assert!(matches!(eval_task("nope", &x), Err(Error::UnknownTask(_))));
    }

    #[test]
    fn zdt_and_dtlz_front_designs_hit_the_front() {
        let mut x = vec![0.0; ZDT_DIM];
        x[0] = 0.25;
        assert!(close(Task::Zdt1.evaluate_unchecked(&x)[1], 0.5, 1e-12));
        assert!(close(Task::Zdt2.evaluate_unchecked(&x)[1], 1.0 - 0.0625, 1e-12));
        let mut x = vec![0.5; DTLZ_DIM];
        x[0] = 0.3;
        x[1] = 0.8;
        let f = Task::Dtlz2.evaluate_unchecked(&x);
        assert!(close(f.iter().map(|v| v * v).sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn task_ids_round_trip() {
        for t in Task::ALL {
            assert_eq!(t.id().parse::<Task>().unwrap(), t);
            let spec = t.spec();
            spec.validate().unwrap();
        }
    }

    #[test]
    fn no_removal_keeps_everything() {
        let ds = generate_dataset(Task::Branin, 50, 0.0, 1).unwrap();
        assert_eq!(ds.len(), 50);
    }

    #[test]
    fn soo_removal_drops_lowest_scores() {
        let scores: Vec<Vec<f64>> = [3.0, 1.0, 5.0, 2.0, 4.0].iter().map(|&v| vec![v]).collect();
        let mut removed = best_fraction_indices(&scores, 2, 0).unwrap();
        removed.sort();
        assert_eq!(removed, vec![1, 3]);
    }

    #[test]
    fn branin_retained_minimum_is_the_removal_percentile() {
        let n = 10_000;
        let ds = generate_dataset(Task::Branin, n, 0.4, 9).unwrap();
        assert_eq!(ds.len(), 6000);
        let mut all: Vec<f64> = draw_designs(Task::Branin, n, 9)
            .iter()
            .map(|x| Task::Branin.evaluate_unchecked(x)[0])
            .collect();
        all.sort_by(f64::total_cmp);
        let retained_min = ds
            .samples
            .iter()
            .map(|s| s.score.as_slice()[0])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(retained_min, all[4000]);
        assert!(ds.samples.iter().all(|s| s.score.as_slice()[0] >= all[3999]));
    }

    #[test]
    fn moo_removal_takes_whole_fronts_first() {
        let ds_full = generate_dataset(Task::OmniTest, 400, 0.0, 3).unwrap();
        let scores = ds_full.scores();
        let removed = best_fraction_indices(&scores, 120, 3).unwrap();
        assert_eq!(removed.len(), 120);
        let fronts = non_dominated_sort(&scores).unwrap();
        let worst_removed = removed.iter().map(|&i| fronts.front_of[i]).max().unwrap();
        for (i, &f) in fronts.front_of.iter().enumerate() {
            if f < worst_removed {
                assert!(removed.contains(&i), "front {f} point {i} kept");
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_validated() {
        assert_eq!(
            generate_dataset(Task::Zdt1, 100, 0.4, 5).unwrap(),
            generate_dataset(Task::Zdt1, 100, 0.4, 5).unwrap()
        );
        assert!(generate_dataset(Task::Zdt1, 5, 0.0, 5).is_err());
        assert!(generate_dataset(Task::Zdt1, 10, 1.0, 5).is_err());
        assert!(matches!(
            generate_dataset(Task::Zdt1, 10, 0.9, 5),
            Err(Error::RemovalTooLarge(1))
        ));
    }

    #[test]
    fn fronts_are_mutually_non_dominated() {
        for t in Task::ALL.into_iter().filter(|t| t.is_multi_objective()) {
            let pf = pf_reference(t, 100).unwrap();
            assert!(!pf.is_empty() && pf.len() <= 100, "{t}: {}", pf.len());
            for a in &pf {
                for b in &pf {
                    assert!(!pareto::dominates(a.as_slice(), b.as_slice()).unwrap(), "{t}");
                }
            }
        }
        assert!(matches!(
            pf_reference(Task::Branin, 10),
            Err(Error::NotMultiObjective(_))
        ));
    }

    #[test]
    fn reference_front_fixtures() {
        for res in [2, 7, 100] {
            let pf = pf_reference(Task::Zdt1, res).unwrap();
            assert!(pf.iter().any(|p| p.as_slice() == [0.0, 1.0]));
            assert!(pf.iter().any(|p| p.as_slice() == [1.0, 0.0]));
        }
        // u = 1.25 is the midpoint of a 3-point arc.
        let pf = pf_reference(Task::OmniTest, 3).unwrap();
        let mid = pf[1].as_slice();
        let expect = -(2f64.sqrt());
        assert!(close(mid[0], expect, 1e-12) && close(mid[1], expect, 1e-12));
        assert_eq!(pf_reference(Task::Zdt3, 100).unwrap().len(), 100);
        assert_eq!(pf_reference(Task::Dtlz7, 100).unwrap().len(), 100);
    }
}
