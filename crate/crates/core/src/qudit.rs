//! Small-dimension state algebra for qubits and qutrits.
//!
//! Joint two-qudit vectors use the index `a * d + b` for `|a, b>` with Alice's
//! qudit first. The Fourier ("bar") basis is `|k̄>_j = ω^{-jk} / √d`, which for
//! `d = 3` gives `|1̄> = (|0> + ω²|1> + ω|2>) / √3` and for `d = 2` the `|±>` pair.

use std::fmt;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Probability amplitude.
pub type Amplitude = Complex64;

/// Tolerance used for normalization and exact-value comparisons.
pub const EXACT_TOL: f64 = 1e-12;

/// Local dimension of a single carrier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dim {
    Qubit,
    Qutrit,
}

impl Dim {
    pub const fn value(self) -> usize {
        match self {
            Dim::Qubit => 2,
            Dim::Qutrit => 3,
        }
    }

    /// `ω^n` with `ω = exp(2πi/d)`, using exact table values.
    pub fn omega_pow(self, n: i64) -> Amplitude {
        let d = self.value() as i64;
        let r = n.rem_euclid(d);
        match (self, r) {
            (_, 0) => Complex64::new(1.0, 0.0),
            (Dim::Qubit, _) => Complex64::new(-1.0, 0.0),
            (Dim::Qutrit, 1) => Complex64::new(-0.5, 0.75f64.sqrt()),
            (Dim::Qutrit, _) => Complex64::new(-0.5, -(0.75f64.sqrt())),
        }
    }

    /// Number of generalized Bell states, `d²`.
    pub const fn bell_count(self) -> usize {
        self.value() * self.value()
    }
}

impl TryFrom<usize> for Dim {
    type Error = Error;

    fn try_from(value: usize) -> Result<Self> {
        match value {
            2 => Ok(Dim::Qubit),
            3 => Ok(Dim::Qutrit),
            other => Err(Error::UnsupportedDimension(other)),
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// A normalized pure state of one qudit (`d` amplitudes) or two qudits (`d²`).
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dim: Dim,
    amps: Vec<Amplitude>,
}

impl StateVector {
    /// Builds a state from raw amplitudes and normalizes it.
    pub fn new(dim: Dim, amps: Vec<Amplitude>) -> Result<Self> {
        let d = dim.value();
        if amps.len() != d && amps.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: amps.len(),
            });
        }
        let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidParameter("state has zero or non-finite norm".into()));
        }
        let amps = amps.into_iter().map(|a| a / norm).collect();
        Ok(Self { dim, amps })
    }

    pub fn from_real(dim: Dim, amps: &[f64]) -> Result<Self> {
        Self::new(dim, amps.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    /// Computational basis state `|index>` of a single qudit.
    pub fn basis(dim: Dim, index: usize) -> Result<Self> {
        let d = dim.value();
        if index >= d {
            return Err(Error::IndexOutOfRange {
                what: "basis index",
                index,
                limit: d,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); d];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { dim, amps })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn amps(&self) -> &[Amplitude] {
        &self.amps
    }

    pub fn is_joint(&self) -> bool {
        self.amps.len() == self.dim.bell_count()
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &StateVector) -> Result<Amplitude> {
        if self.dim != other.dim || self.amps.len() != other.amps.len() {
            return Err(Error::DimensionMismatch {
                expected: self.amps.len(),
                found: other.amps.len(),
            });
        }
        Ok(self
            .amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    /// `|self> ⊗ |other>` for two single-qudit states.
    pub fn tensor(&self, other: &StateVector) -> Result<StateVector> {
        if self.is_joint() || other.is_joint() || self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim.value(),
                found: other.amps.len(),
            });
        }
        let amps = self
            .amps
            .iter()
            .flat_map(|a| other.amps.iter().map(move |b| a * b))
            .collect();
        Ok(StateVector {
            dim: self.dim,
            amps,
        })
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

/// Undetermined source phases of the phased Bell family, gauge-fixed so that
/// `delta[0] = xi[0] = 0`. Only the first `d` entries are read for qubits.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PhaseSet {
    delta: [f64; 3],
    xi: [f64; 3],
}

impl PhaseSet {
    pub fn new(delta: [f64; 3], xi: [f64; 3]) -> Result<Self> {
        if delta[0] != 0.0 || xi[0] != 0.0 {
            return Err(Error::InvalidParameter(
                "phase gauge requires delta[0] = xi[0] = 0".into(),
            ));
        }
        if delta.iter().chain(&xi).any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("phases must be finite".into()));
        }
        Ok(Self { delta, xi })
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn delta(&self) -> [f64; 3] {
        self.delta
    }

    pub fn xi(&self) -> [f64; 3] {
        self.xi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BasisKind {
    Ordinary,
    Bar,
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisKind::Ordinary => f.write_str("ordinary"),
            BasisKind::Bar => f.write_str("bar"),
        }
    }
}

/// One state of either basis, e.g. `|1>` or `|2̄>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisLabel {
    pub kind: BasisKind,
    pub index: usize,
}

impl BasisLabel {
    pub fn new(dim: Dim, kind: BasisKind, index: usize) -> Result<Self> {
        if index >= dim.value() {
            return Err(Error::IndexOutOfRange {
                what: "basis label index",
                index,
                limit: dim.value(),
            });
        }
        Ok(Self { kind, index })
    }

    /// The ideal state this label names.
    pub fn state(&self, dim: Dim) -> Result<StateVector> {
        match self.kind {
            BasisKind::Ordinary => StateVector::basis(dim, self.index),
            BasisKind::Bar => Ok(bar_state(dim, self.index)),
        }
    }
}

fn bar_state(dim: Dim, k: usize) -> StateVector {
    let d = dim.value();
    let scale = 1.0 / (d as f64).sqrt();
    let amps = (0..d)
        .map(|j| dim.omega_pow(-((j * k) as i64)) * scale)
        .collect();
    StateVector { dim, amps }
}

/// The `d` computational basis states.
pub fn ordinary_basis(dim: Dim) -> Vec<StateVector> {
    (0..dim.value())
        .map(|i| StateVector::basis(dim, i).expect("index < d"))
        .collect()
}

/// The Fourier basis mutually unbiased to the computational one.
pub fn mub_bar_basis(dim: Dim) -> Vec<StateVector> {
    (0..dim.value()).map(|k| bar_state(dim, k)).collect()
}

/// Generalized Bell state `Φ_{dk+l}` with source phases:
/// `(1/√d) Σ_m ω^{ml} e^{i(δ_{m+k} + ξ_k)} |m+k, m>`.
pub fn me_state(dim: Dim, k: usize, l: usize, phases: &PhaseSet) -> Result<StateVector> {
    let d = dim.value();
    for (what, index) in [("bell k", k), ("bell l", l)] {
        if index >= d {
            return Err(Error::IndexOutOfRange {
                what,
                index,
                limit: d,
            });
        }
    }
    let delta = phases.delta();
    let xi = phases.xi();
    let scale = 1.0 / (d as f64).sqrt();
    let mut amps = vec![Complex64::new(0.0, 0.0); d * d];
    for m in 0..d {
        let a = (m + k) % d;
        let phase = Complex64::from_polar(1.0, delta[a] + xi[k]);
        amps[a * d + m] = dim.omega_pow((m * l) as i64) * phase * scale;
    }
    Ok(StateVector { dim, amps })
}

/// All `d²` Bell states ordered by `i = d·k + l`.
pub fn bell_basis(dim: Dim, phases: &PhaseSet) -> Vec<StateVector> {
    let d = dim.value();
    (0..d * d)
        .map(|i| me_state(dim, i / d, i % d, phases).expect("indices in range"))
        .collect()
}

/// `|<target|joint>|²` for two-qudit states.
pub fn projection_prob(joint: &StateVector, target: &StateVector) -> Result<f64> {
    if !joint.is_joint() || !target.is_joint() {
        return Err(Error::DimensionMismatch {
            expected: joint.dim().bell_count(),
            found: if joint.is_joint() {
                target.amps().len()
            } else {
                joint.amps().len()
            },
        });
    }
    Ok(target.inner(joint)?.norm_sqr().min(1.0))
}

/// Bob's misaligned encoder output
/// `cos μ sin ν |0> + sin μ sin ν |1> + cos ν |2>`.
pub fn misaligned_state(mu: f64, nu: f64) -> StateVector {
    let amps = [mu.cos() * nu.sin(), mu.sin() * nu.sin(), nu.cos()];
    StateVector::from_real(Dim::Qutrit, &amps).expect("unit norm by construction")
}

/// Binary entropy in bits, with `0·log 0 = 0`.
pub fn shannon_entropy(x: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidProbability(x));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    Ok(-x * x.log2() - (1.0 - x) * (1.0 - x).log2())
}

/// Bob's sifting correction after BSM outcome `Φ_{dk+l}`.
///
/// Ordinary basis: `b → b + k`. Bar basis: `b → -(l + b)`, i.e. the swaps
/// `1↔2`, `0↔2`, `0↔1` for `l = 0, 1, 2` (identity/flip for qubits).
pub fn sift_correct(dim: Dim, bsm_index: usize, basis: BasisKind, bob_symbol: usize) -> Result<usize> {
    let d = dim.value();
    if bsm_index >= d * d {
        return Err(Error::IndexOutOfRange {
            what: "bsm index",
            index: bsm_index,
            limit: d * d,
        });
    }
    if bob_symbol >= d {
        return Err(Error::IndexOutOfRange {
            what: "bob symbol",
            index: bob_symbol,
            limit: d,
        });
    }
    let (k, l) = (bsm_index / d, bsm_index % d);
    Ok(match basis {
        BasisKind::Ordinary => (bob_symbol + k) % d,
        BasisKind::Bar => (2 * d - l - bob_symbol) % d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const Q3: Dim = Dim::Qutrit;
    const Q2: Dim = Dim::Qubit;

    fn c(re: f64, im: f64) -> Amplitude {
        Complex64::new(re, im)
    }

    #[test]
    fn omega_satisfies_cyclotomic_relations() {
        let w = Q3.omega_pow(1);
        assert!((w * w * w - c(1.0, 0.0)).norm() < EXACT_TOL);
        assert!((w * w + w + c(1.0, 0.0)).norm() < EXACT_TOL);
        assert_eq!(Q2.omega_pow(1), c(-1.0, 0.0));
    }

    #[test]
    fn unsupported_dimension_is_rejected() {
        assert_eq!(Dim::try_from(4), Err(Error::UnsupportedDimension(4)));
        assert_eq!(Dim::try_from(3), Ok(Dim::Qutrit));
    }

    #[test]
    fn bar_basis_qutrit_matches_fourier_states() {
        let bar = mub_bar_basis(Q3);
        let s = 1.0 / 3f64.sqrt();
        for a in bar[0].amps() {
            assert!((a - c(s, 0.0)).norm() < EXACT_TOL);
        }
        let zero = StateVector::basis(Q3, 0).unwrap();
        assert!((zero.inner(&bar[0]).unwrap().norm_sqr() - 1.0 / 3.0).abs() < EXACT_TOL);
        assert!(bar[1].inner(&bar[2]).unwrap().norm() < EXACT_TOL);
        // |1̄> = (|0> + ω²|1> + ω|2>)/√3
        let w = Q3.omega_pow(1);
        assert!((bar[1].amps()[1] - w * w * s).norm() < EXACT_TOL);
        assert!((bar[1].amps()[2] - w * s).norm() < EXACT_TOL);
    }

    #[test]
    fn bar_basis_qubit_is_plus_minus() {
        let bar = mub_bar_basis(Q2);
        let s = 0.5f64.sqrt();
        assert!((bar[0].amps()[0] - c(s, 0.0)).norm() < EXACT_TOL);
        assert!((bar[0].amps()[1] - c(s, 0.0)).norm() < EXACT_TOL);
        assert!((bar[1].amps()[0] - c(s, 0.0)).norm() < EXACT_TOL);
        assert!((bar[1].amps()[1] - c(-s, 0.0)).norm() < EXACT_TOL);
    }

    #[test]
    fn mub_overlaps_are_one_over_d() {
        for dim in [Q2, Q3] {
            let d = dim.value() as f64;
            for o in ordinary_basis(dim) {
                for b in mub_bar_basis(dim) {
                    assert!((o.inner(&b).unwrap().norm_sqr() - 1.0 / d).abs() < EXACT_TOL);
                }
            }
        }
    }

    #[test]
    fn unphased_bell_states_match_their_supports() {
        let z = PhaseSet::zero();
        let s = 1.0 / 3f64.sqrt();
        let phi0 = me_state(Q3, 0, 0, &z).unwrap();
        for (idx, a) in phi0.amps().iter().enumerate() {
            let expect = if [0, 4, 8].contains(&idx) { s } else { 0.0 };
            assert!((a - c(expect, 0.0)).norm() < EXACT_TOL, "index {idx}");
        }
        // (|1,0> + |2,1> + |0,2>)/√3
        let phi3 = me_state(Q3, 1, 0, &z).unwrap();
        for (idx, a) in phi3.amps().iter().enumerate() {
            let expect = if [3, 7, 2].contains(&idx) { s } else { 0.0 };
            assert!((a - c(expect, 0.0)).norm() < EXACT_TOL, "index {idx}");
        }
    }

    #[test]
    fn me_state_rejects_out_of_range() {
        assert!(me_state(Q3, 3, 0, &PhaseSet::zero()).is_err());
        assert!(me_state(Q2, 0, 2, &PhaseSet::zero()).is_err());
    }

    #[test]
    fn phase_gauge_is_enforced() {
        assert!(PhaseSet::new([0.1, 0.0, 0.0], [0.0; 3]).is_err());
        assert!(PhaseSet::new([0.0, 0.3, 1.0], [0.0, 2.0, 0.1]).is_ok());
    }

    #[test]
    fn bell_states_orthonormal_brute_force() {
        let phases = PhaseSet::new([0.0, 0.7, -1.9], [0.0, 2.4, 0.3]).unwrap();
        for dim in [Q2, Q3] {
            let bells = bell_basis(dim, &phases);
            for (i, a) in bells.iter().enumerate() {
                for (j, b) in bells.iter().enumerate() {
                    let ip = a.inner(b).unwrap();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((ip - c(expect, 0.0)).norm() < EXACT_TOL, "{dim}: {i},{j}");
                }
            }
        }
    }

    #[test]
    fn projection_examples() {
        let z = PhaseSet::zero();
        let phi0 = me_state(Q3, 0, 0, &z).unwrap();
        let zero = StateVector::basis(Q3, 0).unwrap();
        let two = StateVector::basis(Q3, 2).unwrap();
        let joint = zero.tensor(&zero).unwrap();
        assert!((projection_prob(&joint, &phi0).unwrap() - 1.0 / 3.0).abs() < EXACT_TOL);
        assert!((projection_prob(&phi0, &phi0).unwrap() - 1.0).abs() < EXACT_TOL);
        let (mu, nu) = (0.4, 1.1);
        let joint = two.tensor(&misaligned_state(mu, nu)).unwrap();
        let expect = nu.cos().powi(2) / 3.0;
        assert!((projection_prob(&joint, &phi0).unwrap() - expect).abs() < EXACT_TOL);
        assert!(projection_prob(&zero, &phi0).is_err());
    }

    #[test]
    fn misaligned_state_limits() {
        let s = misaligned_state(PI / 2.0, PI / 2.0);
        assert!((s.amps()[1] - c(1.0, 0.0)).norm() < EXACT_TOL);
        assert!(s.amps()[0].norm() < EXACT_TOL && s.amps()[2].norm() < EXACT_TOL);
        let s = misaligned_state(1.234, 0.0);
        assert!((s.amps()[2] - c(1.0, 0.0)).norm() < EXACT_TOL);
    }

    #[test]
    fn misaligned_state_reaches_bar_zero() {
        // Solve cos ν = 1/√3 by bisection on [0, π/2]; cos is decreasing there.
        let target = 1.0 / 3f64.sqrt();
        let (mut lo, mut hi) = (0.0f64, PI / 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid.cos() > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let nu = 0.5 * (lo + hi);
        let s = misaligned_state(PI / 4.0, nu);
        let overlap = s.inner(&mub_bar_basis(Q3)[0]).unwrap().norm_sqr();
        assert!((overlap - 1.0).abs() < EXACT_TOL);
    }

    #[test]
    fn entropy_values() {
        assert_eq!(shannon_entropy(0.5).unwrap(), 1.0);
        assert_eq!(shannon_entropy(0.0).unwrap(), 0.0);
        assert_eq!(shannon_entropy(1.0).unwrap(), 0.0);
        // -0.05 log2 0.05 - 0.95 log2 0.95 evaluated to 16 digits offline.
        assert!((shannon_entropy(0.05).unwrap() - 0.286_396_957_115_956_3).abs() < 1e-12);
        assert!(shannon_entropy(-0.1).is_err());
        assert!(shannon_entropy(1.5).is_err());
    }

    #[test]
    fn sift_table_examples() {
        assert_eq!(sift_correct(Q3, 3, BasisKind::Ordinary, 0).unwrap(), 1);
        assert_eq!(sift_correct(Q3, 0, BasisKind::Bar, 1).unwrap(), 2);
        for l in 0..3 {
            assert_eq!(sift_correct(Q3, 0, BasisKind::Ordinary, l).unwrap(), l);
        }
        // Bar column pattern repeats every three outcomes.
        let swaps = [(1, 2), (0, 2), (0, 1)];
        for i in 0..9 {
            let (a, b) = swaps[i % 3];
            assert_eq!(sift_correct(Q3, i, BasisKind::Bar, a).unwrap(), b);
            assert_eq!(sift_correct(Q3, i, BasisKind::Bar, b).unwrap(), a);
            let fixed = 3 - a - b;
            assert_eq!(sift_correct(Q3, i, BasisKind::Bar, fixed).unwrap(), fixed);
        }
        assert!(sift_correct(Q3, 9, BasisKind::Bar, 0).is_err());
        assert!(sift_correct(Q3, 0, BasisKind::Bar, 3).is_err());
    }

    /// Every matched-basis pair in a Bell state's support is mapped onto
    /// Alice's symbol, checked by enumerating amplitudes.
    #[test]
    fn sifting_matches_bell_support() {
        for dim in [Q2, Q3] {
            let d = dim.value();
            for (i, bell) in bell_basis(dim, &PhaseSet::zero()).iter().enumerate() {
                for kind in [BasisKind::Ordinary, BasisKind::Bar] {
                    for a in 0..d {
                        for b in 0..d {
                            let sa = BasisLabel::new(dim, kind, a).unwrap().state(dim).unwrap();
                            let sb = BasisLabel::new(dim, kind, b).unwrap().state(dim).unwrap();
                            let amp = sa.tensor(&sb).unwrap().inner(bell).unwrap();
                            if amp.norm() > 1e-9 {
                                assert_eq!(sift_correct(dim, i, kind, b).unwrap(), a, "{dim} Φ{i} {kind} ({a},{b})");
                            }
                        }
                    }
                }
            }
        }
    }
}
