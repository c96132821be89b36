//! Error rates, the phase-error bound and secret key rates.

mod bounds;
mod optimizer;

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::qudit::{shannon_entropy, Dim};
use crate::statistics::ProbTable;

pub use bounds::Party;
use bounds::{contract_box, f_value, row_violation, s_value, Probs};
pub use optimizer::{epsilon_max, EpsilonEstimate, OptimizerConfig};

/// Bar-state pairs `(x, y)` whose ideal success probability vanishes; the
/// bound factor is the largest `f_xy` over these.
pub fn bound_pairs(dim: Dim) -> [(usize, usize); 2] {
    match dim {
        Dim::Qutrit => [(0, 1), (2, 0)],
        Dim::Qubit => [(0, 1), (1, 0)],
    }
}

/// Non-negative expansion coefficients of bar states over ordinary states.
///
/// Only the rows that enter the bound are stored: Alice's row `x` and Bob's
/// row `y` for each pair of [`bound_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SourceCoeffs {
    dim: Dim,
    alice: [Vec<f64>; 2],
    bob: [Vec<f64>; 2],
}

impl SourceCoeffs {
    /// Rows are given in [`bound_pairs`] order.
    pub fn new(dim: Dim, alice: [Vec<f64>; 2], bob: [Vec<f64>; 2]) -> Result<Self> {
        for row in alice.iter().chain(&bob) {
            if row.len() != dim.value() {
                return Err(Error::DimensionMismatch {
                    expected: dim.value(),
                    found: row.len(),
                });
            }
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidParameter(format!("coefficient {v} must be >= 0")));
            }
        }
        Ok(Self { dim, alice, bob })
    }

    /// `1/√d` everywhere: the ideal mutually unbiased sources.
    pub fn uniform(dim: Dim) -> Self {
        let row = vec![1.0 / (dim.value() as f64).sqrt(); dim.value()];
        Self {
            dim,
            alice: [row.clone(), row.clone()],
            bob: [row.clone(), row],
        }
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn alice_rows(&self) -> [usize; 2] {
        bound_pairs(self.dim).map(|(x, _)| x)
    }

    pub fn bob_rows(&self) -> [usize; 2] {
        bound_pairs(self.dim).map(|(_, y)| y)
    }

    pub fn alice(&self, row: usize) -> Option<&[f64]> {
        let slot = self.alice_rows().iter().position(|&r| r == row)?;
        Some(&self.alice[slot])
    }

    pub fn bob(&self, row: usize) -> Option<&[f64]> {
        let slot = self.bob_rows().iter().position(|&r| r == row)?;
        Some(&self.bob[slot])
    }

    /// Rows of the `slot`-th bound pair.
    pub(crate) fn pair(&self, slot: usize) -> (&[f64], &[f64]) {
        (&self.alice[slot], &self.bob[slot])
    }

    /// All coefficients, pair by pair.
    pub fn flatten(&self) -> Vec<f64> {
        (0..2)
            .flat_map(|s| self.alice[s].iter().chain(&self.bob[s]).copied())
            .collect()
    }

    fn rows(&self, x: usize, y: usize) -> Result<(&[f64], &[f64])> {
        let a = self.alice(x).ok_or(Error::IndexOutOfRange {
            what: "stored Alice coefficient row",
            index: x,
            limit: self.dim.value(),
        })?;
        let b = self.bob(y).ok_or(Error::IndexOutOfRange {
            what: "stored Bob coefficient row",
            index: y,
            limit: self.dim.value(),
        })?;
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorReport {
    pub qs: f64,
    pub epsilon: f64,
    pub qp_bound: f64,
    pub feasible_found: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyRateReport {
    pub dim: Dim,
    /// Bits per sifted symbol; may be negative.
    pub r_sifted: f64,
    /// Bits per emitted pulse pair.
    pub r_total: f64,
    pub error_report: ErrorReport,
    pub sift_factor: f64,
}

/// How the phase error rate is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Characterized sources: the phase error equals the state error.
    Ideal,
    /// Phase error bounded from mismatched-basis statistics.
    Uncharacterized,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ideal => "ideal",
            Mode::Uncharacterized => "uncharacterized",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Mode::Ideal),
            "uncharacterized" => Ok(Mode::Uncharacterized),
            other => Err(Error::InvalidParameter(format!("unknown mode {other:?}"))),
        }
    }
}

/// Fraction of heralded matched-ordinary events with mismatched symbols.
pub fn state_error_rate(table: &ProbTable) -> Result<f64> {
    let probs = Probs::new(table.dim(), table.entries());
    let sum = probs.matched_sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(probs.off_diagonal_sum() / sum)
}

/// `S_xy(m)` for the stored rows `x` (Alice) and `y` (Bob).
pub fn s_bound(
    x: usize,
    y: usize,
    m: usize,
    coeffs: &SourceCoeffs,
    table: &ProbTable,
) -> Result<f64> {
    check_dims(coeffs, table)?;
    let d = table.dim().value();
    if m >= d {
        return Err(Error::IndexOutOfRange {
            what: "bound index",
            index: m,
            limit: d,
        });
    }
    let (a, b) = coeffs.rows(x, y)?;
    let probs = Probs::new(table.dim(), table.entries());
    let sum = probs.matched_sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    s_value(probs, sum, x, y, m, a, b).ok_or(Error::UndefinedBound { x, y, m })
}

/// Smallest valid `S_xy(m)`, or `1 - qs` when no `m` has `A[m]·B[m] > 0`.
pub fn f_bound(
    x: usize,
    y: usize,
    coeffs: &SourceCoeffs,
    table: &ProbTable,
    qs: f64,
) -> Result<f64> {
    check_dims(coeffs, table)?;
    let (a, b) = coeffs.rows(x, y)?;
    let probs = Probs::new(table.dim(), table.entries());
    let sum = probs.matched_sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(f_value(probs, sum, qs, x, y, a, b))
}

/// Whether every stored row satisfies its mismatched-basis constraints
/// within `tol` (absolute, in probability units of `table`).
pub fn feasible(coeffs: &SourceCoeffs, table: &ProbTable, tol: f64) -> bool {
    if coeffs.dim() != table.dim() {
        return false;
    }
    let probs = Probs::new(table.dim(), table.entries());
    bound_pairs(table.dim()).iter().enumerate().all(|(slot, &(x, y))| {
        let (a, b) = coeffs.pair(slot);
        row_violation(probs, Party::Alice, x, a) <= tol
            && row_violation(probs, Party::Bob, y, b) <= tol
    })
}

/// Largest constraint violation of any stored row, scaled by the matched
/// ordinary total so that it is comparable across loss levels.
pub fn relative_violation(coeffs: &SourceCoeffs, table: &ProbTable) -> Result<f64> {
    check_dims(coeffs, table)?;
    let probs = Probs::new(table.dim(), table.entries());
    let sum = probs.matched_sum();
    if sum <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    let worst = bound_pairs(table.dim())
        .iter()
        .enumerate()
        .map(|(slot, &(x, y))| {
            let (a, b) = coeffs.pair(slot);
            row_violation(probs, Party::Alice, x, a).max(row_violation(probs, Party::Bob, y, b))
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(worst / sum)
}

/// `max f_xy` over the bound pairs at fixed coefficients, uncapped.
pub fn bound_factor(table: &ProbTable, coeffs: &SourceCoeffs) -> Result<f64> {
    let qs = state_error_rate(table)?;
    bound_pairs(table.dim())
        .iter()
        .map(|&(x, y)| f_bound(x, y, coeffs, table, qs))
        .try_fold(f64::NEG_INFINITY, |acc, v| Ok(acc.max(v?)))
}

/// `min(ε + qs, 1)`.
pub fn phase_error_bound(epsilon: f64, qs: f64) -> f64 {
    (epsilon + qs).clamp(0.0, 1.0)
}

/// Asymptotic key bits per sifted symbol for split state/phase errors.
pub fn key_rate_sifted(dim: Dim, qs: f64, qp: f64) -> Result<f64> {
    let entropies = shannon_entropy(qs)? + shannon_entropy(qp)?;
    Ok(match dim {
        Dim::Qutrit => 3f64.log2() - (qs + qp) - entropies,
        Dim::Qubit => 1.0 - entropies,
    })
}

/// Phase error at which [`key_rate_sifted`] is smallest.
pub fn worst_phase_error(dim: Dim) -> f64 {
    match dim {
        Dim::Qutrit => 2.0 / 3.0,
        Dim::Qubit => 0.5,
    }
}

/// Key rate guaranteed when only `qp ≤ qp_bound` is known: the minimum of
/// [`key_rate_sifted`] over `[0, qp_bound]`.
pub fn key_rate_for_bound(dim: Dim, qs: f64, qp_bound: f64) -> Result<f64> {
    key_rate_sifted(dim, qs, qp_bound.min(worst_phase_error(dim)))
}

pub fn sift_factor(dim: Dim) -> f64 {
    match dim {
        Dim::Qutrit => 1.0 / 6.0,
        Dim::Qubit => 0.25,
    }
}

/// Bits per emitted pulse pair; negative sifted rates give no key.
pub fn key_rate_total(r_sifted: f64, dim: Dim) -> f64 {
    r_sifted.max(0.0) * sift_factor(dim)
}

pub fn analyze(table: &ProbTable, config: &OptimizerConfig, mode: Mode) -> Result<KeyRateReport> {
    let dim = table.dim();
    let qs = state_error_rate(table)?;
    let (epsilon, feasible_found) = match mode {
        Mode::Ideal => (0.0, true),
        Mode::Uncharacterized => {
            let est = epsilon_max(table, config)?;
            (est.epsilon, est.feasible_found)
        }
    };
    let qp_bound = phase_error_bound(epsilon, qs);
    let r_sifted = key_rate_for_bound(dim, qs, qp_bound)?;
    Ok(KeyRateReport {
        dim,
        r_sifted,
        r_total: key_rate_total(r_sifted, dim),
        error_report: ErrorReport {
            qs,
            epsilon,
            qp_bound,
            feasible_found,
        },
        sift_factor: sift_factor(dim),
    })
}

/// Outer box `[lo, hi]` per coefficient of one row: every coefficient
/// vector meeting that row's constraints at absolute tolerance `tol` lies
/// inside. `None` when no such vector exists.
pub fn feasible_box(
    table: &ProbTable,
    party: Party,
    row: usize,
    coeff_max: f64,
    tol: f64,
) -> Result<Option<Vec<(f64, f64)>>> {
    let d = table.dim().value();
    if row >= d {
        return Err(Error::IndexOutOfRange {
            what: "coefficient row",
            index: row,
            limit: d,
        });
    }
    let probs = Probs::new(table.dim(), table.entries());
    Ok(contract_box(probs, party, row, coeff_max, tol))
}

fn check_dims(coeffs: &SourceCoeffs, table: &ProbTable) -> Result<()> {
    if coeffs.dim() != table.dim() {
        return Err(Error::DimensionMismatch {
            expected: table.dim().value(),
            found: coeffs.dim().value(),
        });
    }
    Ok(())
}
