//! Constrained maximization of the bound factor over source coefficients.
//!
//! The objective `max(f_xy)` and its constraints separate by bound pair:
//! pair `(x, y)` only involves Alice's row `x` and Bob's row `y`. Each pair is
//! maximized on its own `2d`-dimensional box. Each row's box is first tightened
//! by interval propagation. The search then runs a feasibility-pruned grid and
//! Nelder–Mead refinement from the best grid cells.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::bounds::{contract_box, f_value, row_violation, Party, Probs};
use super::{bound_pairs, SourceCoeffs};
use crate::error::{Error, Result};
use crate::statistics::ProbTable;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Grid points per coefficient axis.
    pub grid_points: usize,
    /// Nelder–Mead iterations per penalty stage.
    pub refine_iterations: usize,
    /// Number of refined starting cells.
    pub multistarts: usize,
    pub seed: u64,
    /// Constraint slack relative to the matched-ordinary total.
    pub constraint_tolerance: f64,
    /// Upper end of the coefficient box.
    pub coeff_max: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grid_points: 9,
            refine_iterations: 300,
            multistarts: 32,
            seed: 0,
            constraint_tolerance: 1e-9,
            coeff_max: 1.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_points < 2 {
            return Err(Error::InvalidParameter(format!(
                "grid_points must be >= 2, got {}",
                self.grid_points
            )));
        }
        if !(self.constraint_tolerance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint_tolerance must be >= 0, got {}",
                self.constraint_tolerance
            )));
        }
        if !(self.coeff_max > 0.0 && self.coeff_max.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "coeff_max must be positive, got {}",
                self.coeff_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonEstimate {
    /// Maximized bound factor, clipped to `[0, 1 - qs]`.
    pub epsilon: f64,
    /// Best coefficients found; the box midpoint for rows with no feasible
    /// point.
    pub argmax: SourceCoeffs,
    pub feasible_found: bool,
}

/// Maximizes the bound factor over coefficients satisfying the
/// mismatched-basis constraints of `table`.
///
/// The table is rescaled by its matched-ordinary total first, so the
/// tolerance is relative. Output is a deterministic function of
/// `(table, config)`.
pub fn epsilon_max(table: &ProbTable, config: &OptimizerConfig) -> Result<EpsilonEstimate> {
    config.validate()?;
    let dim = table.dim();
    let sum = table.matched_ordinary_sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let scaled: Vec<f64> = table.entries().iter().map(|p| p / sum).collect();
    let probs = Probs::new(dim, &scaled);
    let qs = probs.off_diagonal_sum();
    let ceiling = (1.0 - qs).max(0.0);

    let pairs = bound_pairs(dim);
    let results: Vec<PairOutcome> = pairs
        .par_iter()
        .enumerate()
        .map(|(slot, &(x, y))| maximize_pair(probs, qs, x, y, config, slot as u64))
        .collect();

    let feasible_found = results.iter().all(|r| r.best.is_some());
    let mut alice: [Vec<f64>; 2] = Default::default();
    let mut bob: [Vec<f64>; 2] = Default::default();
    let mut best = f64::NEG_INFINITY;
    for (slot, r) in results.into_iter().enumerate() {
        match r.best {
            Some(c) => {
                best = best.max(c.value);
                alice[slot] = c.a;
                bob[slot] = c.b;
            }
            None => {
                alice[slot] = r.fallback.0;
                bob[slot] = r.fallback.1;
            }
        }
    }
    let epsilon = if feasible_found {
        best.clamp(0.0, ceiling)
    } else {
        ceiling
    };
    Ok(EpsilonEstimate {
        epsilon,
        argmax: SourceCoeffs::new(dim, alice, bob)?,
        feasible_found,
    })
}

#[derive(Debug, Clone)]
struct Candidate {
    value: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl Candidate {
    /// Higher value first, then lexicographically smaller coefficients.
    fn rank(&self, other: &Self) -> Ordering {
        other
            .value
            .total_cmp(&self.value)
            .then_with(|| lex(&self.a, &other.a))
            .then_with(|| lex(&self.b, &other.b))
    }

    fn better(self, other: Self) -> Self {
        if other.rank(&self) == Ordering::Less {
            other
        } else {
            self
        }
    }
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

struct PairOutcome {
    best: Option<Candidate>,
    fallback: (Vec<f64>, Vec<f64>),
}

struct RowSpace {
    bounds: Vec<(f64, f64)>,
    points: Vec<Vec<f64>>,
}

fn maximize_pair(
    probs: Probs<'_>,
    qs: f64,
    x: usize,
    y: usize,
    config: &OptimizerConfig,
    stream: u64,
) -> PairOutcome {
    let d = probs.d;
    let tol = config.constraint_tolerance;
    let mid = vec![config.coeff_max / 2.0; d];
    let alice = row_space(probs, Party::Alice, x, config, stream * 2);
    let bob = row_space(probs, Party::Bob, y, config, stream * 2 + 1);
    let (alice, bob) = match (alice, bob) {
        (Some(a), Some(b)) => (a, b),
        (a, b) => {
            let centre = |r: Option<RowSpace>| {
                r.map(|r| r.bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect())
                    .unwrap_or_else(|| mid.clone())
            };
            return PairOutcome {
                best: None,
                fallback: (centre(a), centre(b)),
            };
        }
    };

    let objective = |a: &[f64], b: &[f64]| f_value(probs, 1.0, qs, x, y, a, b);

    // exhaustive grid over feasible row points; point order is lexicographic,
    // so index order breaks ties the same way coefficient order would
    let nb = bob.points.len();
    let mut cells: Vec<(f64, u32)> = (0..alice.points.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = &alice.points[i];
            bob.points
                .iter()
                .enumerate()
                .map(move |(j, b)| (objective(a, b), (i * nb + j) as u32))
        })
        .collect();
    let by_rank = |l: &(f64, u32), r: &(f64, u32)| r.0.total_cmp(&l.0).then(l.1.cmp(&r.1));
    let keep = config.multistarts.max(1).min(cells.len());
    if keep < cells.len() {
        cells.select_nth_unstable_by(keep - 1, by_rank);
        cells.truncate(keep);
    }
    cells.sort_unstable_by(by_rank);
    let cells: Vec<Candidate> = cells
        .into_iter()
        .map(|(value, k)| Candidate {
            value,
            a: alice.points[k as usize / nb].clone(),
            b: bob.points[k as usize % nb].clone(),
        })
        .collect();

    let bounds: Vec<(f64, f64)> = alice.bounds.iter().chain(&bob.bounds).copied().collect();
    let refined: Vec<Candidate> = cells
        .par_iter()
        .enumerate()
        .map(|(k, start)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(stream * 1_000_003 + k as u64);
            refine(probs, x, y, &bounds, start, config, tol, &objective, &mut rng)
        })
        .collect();

    let best = cells
        .into_iter()
        .chain(refined)
        .reduce(Candidate::better);
    PairOutcome {
        best,
        fallback: (mid.clone(), mid),
    }
}

fn grid_axis(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
        .collect()
}

fn row_space(
    probs: Probs<'_>,
    party: Party,
    row: usize,
    config: &OptimizerConfig,
    stream: u64,
) -> Option<RowSpace> {
    let tol = config.constraint_tolerance;
    let bounds = contract_box(probs, party, row, config.coeff_max, tol)?;
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| grid_axis(lo.max(0.0), hi.min(config.coeff_max), config.grid_points))
        .collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    'outer: loop {
        let p: Vec<f64> = idx.iter().zip(&axes).map(|(&i, ax)| ax[i]).collect();
        if row_violation(probs, party, row, &p) <= tol {
            points.push(p);
        }
        for k in (0..idx.len()).rev() {
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    if points.is_empty() {
        points.extend(find_feasible(probs, party, row, &bounds, config, stream));
    }
    if points.is_empty() {
        return None;
    }
    Some(RowSpace { bounds, points })
}

/// Searches for any point of a thin feasible set the grid missed.
fn find_feasible(
    probs: Probs<'_>,
    party: Party,
    row: usize,
    bounds: &[(f64, f64)],
    config: &OptimizerConfig,
    stream: u64,
) -> Option<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_f00d);
    rng.set_stream(stream);
    let tol = config.constraint_tolerance;
    let violation = |p: &[f64]| row_violation(probs, party, row, &clamp(p, bounds));
    for attempt in 0..config.multistarts.max(4) {
        let start: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| {
                if attempt == 0 {
                    0.5 * (lo + hi)
                } else {
                    lo + (hi - lo) * rng.random::<f64>()
                }
            })
            .collect();
        let steps: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.25 * (hi - lo).max(1e-9)).collect();
        let (p, v) = nelder_mead(violation, &start, &steps, 20 * config.refine_iterations.max(50));
        if v <= tol {
            return Some(clamp(&p, bounds));
        }
    }
    None
}

fn clamp(p: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    p.iter()
        .zip(bounds)
        .map(|(v, &(lo, hi))| v.clamp(lo, hi))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn refine(
    probs: Probs<'_>,
    x: usize,
    y: usize,
    bounds: &[(f64, f64)],
    start: &Candidate,
    config: &OptimizerConfig,
    tol: f64,
    objective: &(dyn Fn(&[f64], &[f64]) -> f64 + Sync),
    rng: &mut ChaCha8Rng,
) -> Candidate {
    let d = probs.d;
    let mut best = start.clone();
    let mut point: Vec<f64> = start.a.iter().chain(&start.b).copied().collect();
    for weight in [1e2, 1e4, 1e6] {
        let steps: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| 0.1 * (hi - lo).max(1e-6) * rng.random_range(0.5..1.5))
            .collect();
        let mut penalized = |p: &[f64]| {
            let p = clamp(p, bounds);
            let (a, b) = p.split_at(d);
            let viol = row_violation(probs, Party::Alice, x, a)
                .max(row_violation(probs, Party::Bob, y, b));
            let value = objective(a, b);
            if viol <= tol {
                let c = Candidate {
                    value,
                    a: a.to_vec(),
                    b: b.to_vec(),
                };
                best = std::mem::replace(&mut best, c.clone()).better(c);
            }
            -(value - weight * (viol - tol).max(0.0))
        };
        let (p, _) = nelder_mead(&mut penalized, &point, &steps, config.refine_iterations);
        point = clamp(&p, bounds);
    }
    best
}

/// Minimizes `f` from `start` with an axis-aligned initial simplex.
fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    start: &[f64],
    steps: &[f64],
    iterations: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((start.to_vec(), f(start)));
    for i in 0..n {
        let mut v = start.to_vec();
        v[i] += steps[i];
        let fv = f(&v);
        simplex.push((v, fv));
    }
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() <= 1e-15 * simplex[0].1.abs().max(1e-300) && spread.is_finite() {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(v, _)| v[j]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n].0)
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < simplex[n].1 {
                let c = along(-0.5);
                let fc = f(&c);
                (c, fc)
            } else {
                let c = along(0.5);
                let fc = f(&c);
                (c, fc)
            };
            if fc < simplex[n].1.min(fr) {
                simplex[n] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for vertex in simplex.iter_mut().skip(1) {
                    let v: Vec<f64> = best
                        .iter()
                        .zip(&vertex.0)
                        .map(|(b, w)| b + 0.5 * (w - b))
                        .collect();
                    let fv = f(&v);
                    *vertex = (v, fv);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0)
}
