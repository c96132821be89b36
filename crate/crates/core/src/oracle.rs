//! Brute-force eavesdropper used to certify the phase-error bound.
//!
//! An attack is an isometry from the two transmitted carriers into a flag
//! qubit and an environment of dimension `E`. Rows `0..E` of the isometry are
//! the heralded-success branch, rows `E..2E` the failure branch. Sources use
//! orthonormal ordinary states `e^{iφ_j}|j>`, so true expansion coefficients
//! are plain overlaps. Only such sources are certified.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::qudit::{
    me_state, mub_bar_basis, sift_correct, BasisKind, Dim, PhaseSet, StateVector,
};
use crate::security::{
    bound_factor, bound_pairs, epsilon_max, feasible, phase_error_bound, state_error_rate,
    OptimizerConfig, SourceCoeffs,
};
use crate::statistics::{ChannelParams, DetectorModel, ProbTable};

const CHAIN_SLACK: f64 = 1e-9;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn holds(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + CHAIN_SLACK * (1.0 + rhs.abs())
}

/// A concrete eavesdropping isometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackModel {
    dim: Dim,
    env_dim: usize,
    seed: u64,
    strength: f64,
    isometry: DMatrix<Complex64>,
}

impl AttackModel {
    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn env_dim(&self) -> usize {
        self.env_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// `2E × d²`, orthonormal columns.
    pub fn isometry(&self) -> &DMatrix<Complex64> {
        &self.isometry
    }

    /// Largest deviation of `V†V` from the identity.
    pub fn isometry_defect(&self) -> f64 {
        let n = self.isometry.ncols();
        let gram = self.isometry.adjoint() * &self.isometry;
        (gram - DMatrix::<Complex64>::identity(n, n))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max)
    }

    /// Unnormalized success-branch environment state for input `|joint>`.
    fn success_branch(&self, joint: &StateVector) -> DVector<Complex64> {
        let input = DVector::from_column_slice(joint.amps());
        self.isometry.rows(0, self.env_dim) * input
    }
}

/// Honest relay: herald `Φ0` into environment state `|0>`, send every other
/// Bell state to the failure branch.
pub fn honest_attack(dim: Dim, env_dim: usize) -> Result<AttackModel> {
    let n = dim.bell_count();
    if env_dim + 1 < n {
        return Err(Error::InvalidParameter(format!(
            "environment dimension {env_dim} too small for {n} inputs"
        )));
    }
    let bells = crate::qudit::bell_basis(dim, &PhaseSet::zero());
    let mut iso = DMatrix::<Complex64>::zeros(2 * env_dim, n);
    for (t, bell) in bells.iter().enumerate() {
        let row = if t == 0 { 0 } else { env_dim + t - 1 };
        for (col, amp) in bell.amps().iter().enumerate() {
            iso[(row, col)] = amp.conj();
        }
    }
    Ok(AttackModel {
        dim,
        env_dim,
        seed: 0,
        strength: 0.0,
        isometry: iso,
    })
}

/// Isometry interpolating the honest relay (`strength = 0`) and a Haar-like
/// random isometry (`strength = 1`); environment dimension `d²`.
pub fn random_attack(dim: Dim, seed: u64, strength: f64) -> Result<AttackModel> {
    random_attack_with_env(dim, seed, strength, dim.bell_count())
}

pub fn random_attack_with_env(
    dim: Dim,
    seed: u64,
    strength: f64,
    env_dim: usize,
) -> Result<AttackModel> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidParameter(format!("strength {strength} outside [0, 1]")));
    }
    let honest = honest_attack(dim, env_dim)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = honest.isometry.shape();
    // unit expected column norm, matching the honest columns
    let scale = (2.0 * rows as f64).sqrt().recip();
    let noise = DMatrix::<Complex64>::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re, im) * scale
    });
    let mixed = honest.isometry.map(|z| z * (1.0 - strength)) + noise.map(|z| z * strength);
    let qr = mixed.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..cols {
        let rjj = r[(j, j)];
        if rjj.norm() == 0.0 {
            return Err(Error::InvalidParameter("rank-deficient attack sample".into()));
        }
        let phase = rjj / rjj.norm();
        let mut col = q.column_mut(j);
        col *= phase;
    }
    Ok(AttackModel {
        dim,
        env_dim,
        seed,
        strength,
        isometry: q,
    })
}

/// Source states in table order plus the phases of the ordinary states.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleSources {
    dim: Dim,
    alice: Vec<StateVector>,
    bob: Vec<StateVector>,
    alice_phases: Vec<f64>,
    bob_phases: Vec<f64>,
}

impl OracleSources {
    /// Ideal bases with no extra phases.
    pub fn ideal(dim: Dim) -> Self {
        Self::with_phases(dim, vec![0.0; dim.value()], vec![0.0; dim.value()], None)
            .expect("ideal sources")
    }

    /// Ordinary states `e^{iφ_j}|j>`, ideal bar states, and optionally Bob's
    /// `|0̄>` replaced by a real non-negative state.
    pub fn with_phases(
        dim: Dim,
        alice_phases: Vec<f64>,
        bob_phases: Vec<f64>,
        bob_bar0: Option<StateVector>,
    ) -> Result<Self> {
        let d = dim.value();
        if alice_phases.len() != d || bob_phases.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: alice_phases.len().min(bob_phases.len()),
            });
        }
        let build = |phases: &[f64]| -> Vec<StateVector> {
            let mut states: Vec<StateVector> = phases
                .iter()
                .enumerate()
                .map(|(j, &phi)| {
                    let mut amps = vec![c(0.0); d];
                    amps[j] = Complex64::from_polar(1.0, phi);
                    StateVector::new(dim, amps).expect("unit vector")
                })
                .collect();
            states.extend(mub_bar_basis(dim));
            states
        };
        let alice = build(&alice_phases);
        let mut bob = build(&bob_phases);
        if let Some(s) = bob_bar0 {
            if s.dim() != dim || s.is_joint() {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.amps().len(),
                });
            }
            bob[d] = s;
        }
        Ok(Self {
            dim,
            alice,
            bob,
            alice_phases,
            bob_phases,
        })
    }

    /// Random ordinary phases; with `misaligned`, Bob's `|0̄>` becomes a
    /// random real state with non-negative amplitudes.
    pub fn random<R: Rng + ?Sized>(dim: Dim, rng: &mut R, misaligned: bool) -> Self {
        let d = dim.value();
        let tau = std::f64::consts::TAU;
        let alice: Vec<f64> = (0..d).map(|_| tau * rng.random::<f64>()).collect();
        let bob: Vec<f64> = (0..d).map(|_| tau * rng.random::<f64>()).collect();
        let bar0 = misaligned.then(|| {
            let half_pi = std::f64::consts::FRAC_PI_2;
            match dim {
                Dim::Qutrit => crate::qudit::misaligned_state(
                    half_pi * rng.random::<f64>(),
                    half_pi * rng.random::<f64>(),
                ),
                Dim::Qubit => {
                    let mu = half_pi * rng.random::<f64>();
                    StateVector::from_real(dim, &[mu.cos(), mu.sin()]).expect("unit vector")
                }
            }
        });
        Self::with_phases(dim, alice, bob, bar0).expect("consistent sources")
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn alice(&self) -> &[StateVector] {
        &self.alice
    }

    pub fn bob(&self) -> &[StateVector] {
        &self.bob
    }

    /// `<α_j | ᾱ_row>` (or Bob's) for every ordinary `j`.
    pub fn overlaps(&self, bob: bool, row: usize) -> Vec<Complex64> {
        let states = if bob { &self.bob } else { &self.alice };
        let d = self.dim.value();
        (0..d)
            .map(|j| states[j].inner(&states[d + row]).expect("same dimension"))
            .collect()
    }

    /// Magnitudes of the overlaps for the rows the bound uses.
    pub fn true_coefficients(&self) -> SourceCoeffs {
        let pairs = bound_pairs(self.dim);
        let mags = |bob: bool, row: usize| -> Vec<f64> {
            self.overlaps(bob, row).iter().map(|z| z.norm()).collect()
        };
        SourceCoeffs::new(
            self.dim,
            pairs.map(|(x, _)| mags(false, x)),
            pairs.map(|(_, y)| mags(true, y)),
        )
        .expect("non-negative magnitudes")
    }

    /// Bell-family phases under which the honest relay yields `Φ̃0` exactly:
    /// `δ_m = φᴬ_m + φᴮ_m - φᴬ_0 - φᴮ_0`.
    pub fn consistent_phases(&self) -> PhaseSet {
        let mut delta = [0.0; 3];
        let base = self.alice_phases[0] + self.bob_phases[0];
        for (m, slot) in delta.iter_mut().enumerate().take(self.dim.value()).skip(1) {
            *slot = self.alice_phases[m] + self.bob_phases[m] - base;
        }
        PhaseSet::new(delta, [0.0; 3]).expect("gauge fixed")
    }
}

/// Statistics and post-selected state produced by an attack.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub table: ProbTable,
    /// Unnormalized success branches `√p(x,y)·|Γxy>`, row-major over settings.
    branches: Vec<DVector<Complex64>>,
    pub rho_ab: DMatrix<Complex64>,
}

impl AttackOutcome {
    fn branch(&self, x: usize, y: usize) -> &DVector<Complex64> {
        &self.branches[x * 2 * self.table.dim().value() + y]
    }

    /// Normalized `|Γxy>`, or `None` when `p(x, y) = 0`.
    pub fn gamma(&self, x: usize, y: usize) -> Option<DVector<Complex64>> {
        let b = self.branch(x, y);
        let n = b.norm();
        (n > 0.0).then(|| b / c(n))
    }

    /// `Σ_{i≠j} <i,j|ρ|i,j>`.
    pub fn density_state_error(&self) -> f64 {
        let d = self.table.dim().value();
        (0..d * d)
            .filter(|k| k / d != k % d)
            .map(|k| self.rho_ab[(k, k)].re)
            .sum()
    }

    /// `<Φ|ρ|Φ>` for a two-qudit state.
    pub fn overlap(&self, state: &StateVector) -> f64 {
        let v = DVector::from_column_slice(state.amps());
        (v.adjoint() * &self.rho_ab * &v)[(0, 0)].re
    }
}

pub fn attack_outcome(
    attack: &AttackModel,
    alice: &[StateVector],
    bob: &[StateVector],
) -> Result<AttackOutcome> {
    let dim = attack.dim;
    let d = dim.value();
    for states in [alice, bob] {
        if states.len() != 2 * d {
            return Err(Error::DimensionMismatch {
                expected: 2 * d,
                found: states.len(),
            });
        }
    }
    let mut branches = Vec::with_capacity(4 * d * d);
    let mut entries = Vec::with_capacity(4 * d * d);
    for a in alice {
        for b in bob {
            let v = attack.success_branch(&a.tensor(b)?);
            entries.push(v.norm_squared().min(1.0));
            branches.push(v);
        }
    }
    let table = ProbTable::new(dim, entries)?;
    let sum = table.matched_ordinary_sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateAttack);
    }
    let mut w = DMatrix::<Complex64>::zeros(d * d, attack.env_dim);
    for x in 0..d {
        for y in 0..d {
            w.set_row(x * d + y, &branches[x * 2 * d + y].transpose());
        }
    }
    let rho_ab = (&w * w.adjoint()).map(|z| z / sum);
    Ok(AttackOutcome {
        table,
        branches,
        rho_ab,
    })
}

/// Weight of `ρ` on the Bell states with a wrong phase index.
pub fn direct_phase_error(outcome: &AttackOutcome, phases: &PhaseSet) -> f64 {
    let dim = outcome.table.dim();
    let d = dim.value();
    (0..d)
        .flat_map(|k| (1..d).map(move |l| (k, l)))
        .map(|(k, l)| outcome.overlap(&me_state(dim, k, l, phases).expect("in range")))
        .sum()
}

/// `Σ_l` over the `k = 0` wrong-phase Bell states only.
fn zero_shift_phase_terms(outcome: &AttackOutcome, phases: &PhaseSet) -> f64 {
    let dim = outcome.table.dim();
    (1..dim.value())
        .map(|l| outcome.overlap(&me_state(dim, 0, l, phases).expect("in range")))
        .sum()
}

/// Pass flags of every step from the measured statistics to the final bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainReport {
    /// State error from the table equals the density-matrix form.
    pub identity: bool,
    /// True coefficients satisfy the mismatched-basis constraints.
    pub constraints: bool,
    /// Diagonal branch sum bounded by the bar-state consistency relation.
    pub consistency: bool,
    /// Per-environment-component squared triangle step, taken literally.
    pub triangle: bool,
    /// Aggregate triangle step `‖t‖ ≥ A_m B_m √W - Σ D`.
    pub triangle_norm: bool,
    pub cauchy_schwarz: bool,
    pub final_bound: bool,
    /// Wrong-phase weight bounded by the `k = 0` terms plus `Qs`.
    pub phase_terms: bool,
    /// Direct phase error within `f(true coefficients) + Qs`.
    pub theorem: bool,
}

impl ChainReport {
    /// All certified steps; the literal per-component triangle step is
    /// reported separately.
    pub fn certified(&self) -> bool {
        self.identity
            && self.constraints
            && self.consistency
            && self.triangle_norm
            && self.cauchy_schwarz
            && self.final_bound
            && self.phase_terms
            && self.theorem
    }
}

/// Numbers behind a [`ChainReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct ChainValues {
    pub report: ChainReport,
    pub qs: f64,
    pub direct_qp: f64,
    /// `max f_xy` at the true coefficients, uncapped.
    pub f_true: f64,
}

/// True coefficients satisfy the constraints (tolerance `1e-9` relative to
/// the matched-ordinary total).
pub fn verify_constraints(attack: &AttackModel, sources: &OracleSources) -> Result<bool> {
    let outcome = attack_outcome(attack, sources.alice(), sources.bob())?;
    let tol = 1e-9 * outcome.table.matched_ordinary_sum();
    Ok(feasible(&sources.true_coefficients(), &outcome.table, tol))
}

/// Evaluates each inequality of the bound derivation with the attack's true
/// branches, phases and coefficients.
pub fn verify_bound_chain(attack: &AttackModel, sources: &OracleSources) -> Result<ChainValues> {
    if attack.dim != sources.dim {
        return Err(Error::DimensionMismatch {
            expected: attack.dim.value(),
            found: sources.dim.value(),
        });
    }
    let outcome = attack_outcome(attack, sources.alice(), sources.bob())?;
    let table = &outcome.table;
    let dim = table.dim();
    let d = dim.value();
    let sum = table.matched_ordinary_sum();
    let qs = state_error_rate(table)?;
    let coeffs = sources.true_coefficients();
    let phases = sources.consistent_phases();

    let identity = (qs - outcome.density_state_error()).abs() <= 1e-10;
    let constraints = feasible(&coeffs, table, 1e-9 * sum);

    let mut consistency = true;
    let mut triangle = true;
    let mut triangle_norm = true;
    let mut cauchy_schwarz = true;
    let mut final_bound = true;

    let env = attack.env_dim;
    for &(x, y) in &bound_pairs(dim) {
        let ca = sources.overlaps(false, x);
        let cb = sources.overlaps(true, y);
        let a: Vec<f64> = ca.iter().map(|z| z.norm()).collect();
        let b: Vec<f64> = cb.iter().map(|z| z.norm()).collect();
        let zeta: Vec<Complex64> = ca
            .iter()
            .zip(&cb)
            .map(|(p, q)| {
                let z = p * q;
                if z.norm() > 0.0 {
                    z / z.norm()
                } else {
                    c(1.0)
                }
            })
            .collect();

        // t = Σ A B e^{iζ} √p γ, s = Σ e^{iζ} √p γ
        let mut t = DVector::<Complex64>::zeros(env);
        let mut s = DVector::<Complex64>::zeros(env);
        for i in 0..d {
            let v = outcome.branch(i, i);
            t += v * (zeta[i] * (a[i] * b[i]));
            s += v * zeta[i];
        }
        let l_val = t.norm_squared();
        let w_val = s.norm_squared();
        let mut g = table.bar(x, y).sqrt();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    g += a[i] * b[j] * table.ordinary(i, j).sqrt();
                }
            }
        }
        consistency &= holds(l_val, g * g);

        for m in 0..d {
            let am = a[m] * b[m];
            if am <= 0.0 {
                continue;
            }
            let others: Vec<usize> = (1..d).map(|k| (m + k) % d).collect();
            let dk: Vec<f64> = others
                .iter()
                .map(|&n| (am - a[n] * b[n]).abs() * table.ordinary(n, n).sqrt())
                .collect();
            let gammas: Vec<Option<DVector<Complex64>>> =
                others.iter().map(|&n| outcome.gamma(n, n)).collect();
            // Σ_n (X_n - Y_n)²
            let mut literal = 0.0;
            for n in 0..env {
                let xn = am * s[n].norm();
                let yn: f64 = dk
                    .iter()
                    .zip(&gammas)
                    .map(|(dv, g)| dv * g.as_ref().map_or(0.0, |g| g[n].norm()))
                    .sum();
                literal += (xn - yn).powi(2);
            }
            let d_sum: f64 = dk.iter().sum();
            let d_prod = if d == 3 { 2.0 * dk[0] * dk[1] } else { 0.0 };
            let gap = am * w_val.sqrt() - d_sum;

            triangle &= holds(literal, l_val);
            triangle_norm &= gap <= 0.0 || holds(gap, l_val.sqrt());
            cauchy_schwarz &= holds(gap * gap - d_prod, literal);
            let rhs = ((g * g + d_prod).sqrt() + d_sum).powi(2) / (am * am);
            final_bound &= holds(w_val, rhs);
        }
    }

    let direct_qp = direct_phase_error(&outcome, &phases);
    let phase_terms = holds(direct_qp, zero_shift_phase_terms(&outcome, &phases) + qs);
    let f_true = bound_factor(table, &coeffs)?;
    let theorem = !constraints || holds(direct_qp, phase_error_bound(f_true, qs));

    Ok(ChainValues {
        report: ChainReport {
            identity,
            constraints,
            consistency,
            triangle,
            triangle_norm,
            cauchy_schwarz,
            final_bound,
            phase_terms,
            theorem,
        },
        qs,
        direct_qp,
        f_true,
    })
}

/// Seed of trial `index` under base seed `base`: one ChaCha stream per trial.
pub fn trial_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

/// One certification trial, replayable from its `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertRow {
    pub seed: u64,
    pub dim: Dim,
    pub strength: f64,
    pub misaligned: bool,
    pub qs: f64,
    pub epsilon: f64,
    pub feasible_found: bool,
    pub f_true: f64,
    pub direct_qp: f64,
    pub bound_qp: f64,
    pub chain: ChainReport,
    /// `direct_qp ≤ ε + Qs + 1e-6`.
    pub sound: bool,
    /// `ε ≥ min(f_true, 1 - Qs)` up to `1e-6`.
    pub maximal: bool,
}

impl CertRow {
    pub fn violation(&self) -> bool {
        !(self.chain.certified() && self.sound && self.maximal)
    }
}

/// Draws an attack and sources from `seed` and certifies every step.
pub fn certify_trial(dim: Dim, seed: u64, config: &OptimizerConfig) -> Result<CertRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // weak attacks are where the bound is not trivially capped
    let strength = rng.random::<f64>().powi(3);
    let misaligned = rng.random_bool(0.5);
    let attack = random_attack(dim, rng.next_u64(), strength)?;
    let sources = OracleSources::random(dim, &mut rng, misaligned);
    let values = verify_bound_chain(&attack, &sources)?;
    let table = attack_outcome(&attack, sources.alice(), sources.bob())?.table;
    let est = epsilon_max(&table, config)?;
    let bound_qp = phase_error_bound(est.epsilon, values.qs);
    let sound = !est.feasible_found || values.direct_qp <= est.epsilon + values.qs + 1e-6;
    let maximal = !values.report.constraints
        || est.epsilon >= values.f_true.min(1.0 - values.qs) - 1e-6;
    Ok(CertRow {
        seed,
        dim,
        strength,
        misaligned,
        qs: values.qs,
        epsilon: est.epsilon,
        feasible_found: est.feasible_found,
        f_true: values.f_true,
        direct_qp: values.direct_qp,
        bound_qp,
        chain: values.report,
        sound,
        maximal,
    })
}

/// Which Bell states the relay heralds in the entanglement-based run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Herald {
    /// Only `Φ0`.
    PhiZero,
    /// All `d²` Bell states.
    Complete,
}

/// Symbol statistics of the entanglement-based protocol, indexed by basis
/// (`0` ordinary, `1` bar).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EdpReport {
    pub trials: u64,
    pub sifted: [u64; 2],
    pub errors: [u64; 2],
    /// Disagreements when Bob skips the sifting correction.
    pub raw_disagreements: [u64; 2],
}

impl EdpReport {
    pub fn qber(&self, basis: BasisKind) -> f64 {
        let k = basis_slot(basis);
        ratio(self.errors[k], self.sifted[k])
    }

    pub fn raw_disagreement(&self, basis: BasisKind) -> f64 {
        let k = basis_slot(basis);
        ratio(self.raw_disagreements[k], self.sifted[k])
    }
}

fn basis_slot(basis: BasisKind) -> usize {
    match basis {
        BasisKind::Ordinary => 0,
        BasisKind::Bar => 1,
    }
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Both parties hold `Φ0` pairs and measure their half in a random basis;
/// the other halves meet at the relay. Loss and dark counts follow the same
/// detector model as the probability tables.
pub fn edp_roundtrip(
    dim: Dim,
    n_trials: u64,
    seed: u64,
    channel: ChannelParams,
    herald: Herald,
) -> Result<EdpReport> {
    if n_trials == 0 {
        return Err(Error::InvalidParameter("n_trials must be >= 1".into()));
    }
    let d = dim.value();
    let (signal, noise) = DetectorModel::for_dim(dim).terms(channel);
    let bells = crate::qudit::bell_basis(dim, &PhaseSet::zero());
    let heralded: Vec<usize> = match herald {
        Herald::PhiZero => vec![0],
        Herald::Complete => (0..d * d).collect(),
    };
    let bar = mub_bar_basis(dim);
    let ordinary = crate::qudit::ordinary_basis(dim);
    let basis_states = |kind: BasisKind| match kind {
        BasisKind::Ordinary => &ordinary,
        BasisKind::Bar => &bar,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = EdpReport {
        trials: n_trials,
        ..Default::default()
    };
    let kinds = [BasisKind::Ordinary, BasisKind::Bar];
    for _ in 0..n_trials {
        let (ka, kb) = (kinds[rng.random_range(0..2)], kinds[rng.random_range(0..2)]);
        let a = rng.random_range(0..d);
        let b = rng.random_range(0..d);
        // each party measures its half of Φ0 in the conjugate basis, which
        // leaves the travelling half in the encoded state itself
        let joint = basis_states(ka)[a].tensor(&basis_states(kb)[b])?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut outcome = None;
        for &t in &heralded {
            let born = crate::qudit::projection_prob(&joint, &bells[t])?;
            acc += signal * born + noise;
            if u < acc {
                outcome = Some(t);
                break;
            }
        }
        let Some(t) = outcome else { continue };
        if ka != kb {
            continue;
        }
        let slot = basis_slot(ka);
        report.sifted[slot] += 1;
        if sift_correct(dim, t, ka, b)? != a {
            report.errors[slot] += 1;
        }
        if b != a {
            report.raw_disagreements[slot] += 1;
        }
    }
    Ok(report)
}
