//! Phase-error bound functions and the source-coefficient constraints.
//!
//! Everything here works on raw row-major `(2d) × (2d)` probability slices so
//! the optimizer can run on a rescaled copy of a table. Both the bound and the
//! constraints are homogeneous in the probabilities.

use crate::qudit::Dim;

/// Which party's bar-state row a coefficient vector describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Probs<'a> {
    pub d: usize,
    pub p: &'a [f64],
}

impl<'a> Probs<'a> {
    pub fn new(dim: Dim, p: &'a [f64]) -> Self {
        Self { d: dim.value(), p }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.p[x * 2 * self.d + y]
    }

    /// `p(x̄, ȳ)`
    #[inline]
    pub fn bar_bar(&self, x: usize, y: usize) -> f64 {
        self.at(self.d + x, self.d + y)
    }

    pub fn matched_sum(&self) -> f64 {
        let d = self.d;
        (0..d).flat_map(|i| (0..d).map(move |j| self.at(i, j))).sum()
    }

    pub fn off_diagonal_sum(&self) -> f64 {
        let d = self.d;
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| self.at(i, j))
            .sum()
    }

    /// Target probability and the ordinary-setting weights `q_l` behind one
    /// constraint column.
    #[inline]
    fn column(&self, party: Party, row: usize, i: usize) -> (f64, [f64; 3]) {
        let d = self.d;
        let mut q = [0.0; 3];
        match party {
            Party::Alice => {
                for (l, ql) in q.iter_mut().enumerate().take(d) {
                    *ql = self.at(l, i);
                }
                (self.at(d + row, i), q)
            }
            Party::Bob => {
                for (l, ql) in q.iter_mut().enumerate().take(d) {
                    *ql = self.at(i, l);
                }
                (self.at(i, d + row), q)
            }
        }
    }
}

/// `S_xy(m)`; `None` when `A[m]·B[m]` vanishes.
///
/// `sum` is the matched-ordinary total of `probs`.
pub(crate) fn s_value(
    probs: Probs<'_>,
    sum: f64,
    x: usize,
    y: usize,
    m: usize,
    a: &[f64],
    b: &[f64],
) -> Option<f64> {
    let d = probs.d;
    let am = a[m] * b[m];
    if am <= 0.0 {
        return None;
    }
    let mut g = probs.bar_bar(x, y).sqrt();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                g += a[i] * b[j] * probs.at(i, j).sqrt();
            }
        }
    }
    let dk = |k: usize| {
        let n = (m + k) % d;
        (am - a[n] * b[n]).abs() * probs.at(n, n).sqrt()
    };
    Some(if d == 3 {
        let (d1, d2) = (dk(1), dk(2));
        let inner = (g * g + 2.0 * d1 * d2).sqrt() + d1 + d2;
        2.0 * inner * inner / (3.0 * am * am * sum)
    } else {
        let inner = g + dk(1);
        inner * inner / (2.0 * am * am * sum)
    })
}

/// Minimum of `S_xy(m)` over valid `m`, or `1 - qs` when none is valid.
pub(crate) fn f_value(
    probs: Probs<'_>,
    sum: f64,
    qs: f64,
    x: usize,
    y: usize,
    a: &[f64],
    b: &[f64],
) -> f64 {
    (0..probs.d)
        .filter_map(|m| s_value(probs, sum, x, y, m, a, b))
        .reduce(f64::min)
        .unwrap_or(1.0 - qs)
}

/// Largest amount by which `coeffs` violates any constraint column of its
/// row. Non-positive means feasible with zero slack.
pub(crate) fn row_violation(probs: Probs<'_>, party: Party, row: usize, coeffs: &[f64]) -> f64 {
    let d = probs.d;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..d {
        let (t, q) = probs.column(party, row, i);
        let mut quad = 0.0;
        let mut cross = 0.0;
        for l in 0..d {
            quad += coeffs[l] * coeffs[l] * q[l];
            for k in (l + 1)..d {
                cross += coeffs[l] * coeffs[k] * (q[l] * q[k]).sqrt();
            }
        }
        worst = worst.max((t - quad).abs() - 2.0 * cross);
    }
    worst
}

/// Outer box of the feasible set of one coefficient row, starting from
/// `[0, coeff_max]` and tightened by interval propagation. Every feasible
/// point (at tolerance `tol`) lies inside. `None` when the box collapses.
pub(crate) fn contract_box(
    probs: Probs<'_>,
    party: Party,
    row: usize,
    coeff_max: f64,
    tol: f64,
) -> Option<Vec<(f64, f64)>> {
    let d = probs.d;
    let mut lo = vec![0.0; d];
    let mut hi = vec![coeff_max; d];
    // guards against rounding in the closed-form bounds
    let slack = 1e-12 * coeff_max.max(1.0);
    for _ in 0..200 {
        let mut moved = 0.0f64;
        for i in 0..d {
            let (t, q) = probs.column(party, row, i);
            let root_lo = (t - tol).max(0.0).sqrt();
            let root_hi = (t + tol).sqrt();
            let sq: Vec<f64> = q[..d].iter().map(|v| v.sqrt()).collect();
            for l in 0..d {
                if sq[l] <= 0.0 {
                    continue;
                }
                let others = (0..d).filter(|&k| k != l);
                let rest_hi: f64 = others.clone().map(|k| hi[k] * sq[k]).sum();
                let mut new_lo = (root_lo - rest_hi) / sq[l] - slack;
                let new_hi = if d == 3 {
                    let u: Vec<f64> = others.map(|k| hi[k] * sq[k]).collect();
                    (u[0] + u[1] + (4.0 * u[0] * u[1] + t + tol).sqrt()) / sq[l] + slack
                } else {
                    let k = 1 - l;
                    new_lo = new_lo.max((lo[k] * sq[k] - root_hi) / sq[l] - slack);
                    (hi[k] * sq[k] + root_hi) / sq[l] + slack
                };
                if new_lo > lo[l] {
                    moved = moved.max(new_lo - lo[l]);
                    lo[l] = new_lo;
                }
                if new_hi < hi[l] {
                    moved = moved.max(hi[l] - new_hi);
                    hi[l] = new_hi;
                }
            }
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return None;
        }
        if moved <= 1e-15 {
            break;
        }
    }
    Some(lo.into_iter().zip(hi).collect())
}
