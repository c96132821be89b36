//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `EXPECTED_RED` are known to fail for documented
//! reasons; they still print FAIL. The process exits non-zero when any other
//! criterion fails or when an expected-red criterion starts passing.
//! Pass criterion ids as arguments to run a subset.

use std::process::Command;
use std::time::{Duration, Instant};

use qkd3::cli::{find_crossover, run_sweep, Quantity, SweepSpec};
use qkd3::oracle::{certify_trial, edp_roundtrip, trial_seed, CertRow, Herald};
use qkd3::qudit::{misaligned_state, BasisKind, Dim, PhaseSet};
use qkd3::security::{
    analyze, bound_factor, bound_pairs, epsilon_max, feasible_box, key_rate_for_bound,
    key_rate_sifted, key_rate_total, state_error_rate, Mode, OptimizerConfig, Party, SourceCoeffs,
};
use qkd3::statistics::{channel_table, ideal_states, ideal_table, table_from_sources, ChannelParams, ProbTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const EXPECTED_RED: &[&str] = &["5", "6", "8", "9", "10"];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn note(id: &str, text: &str) {
    println!("     note {id}: {text}");
}

fn main() {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: Vec<(&str, &str, fn() -> Verdict)> = vec![
        ("1", "ideal qutrit table entries", c1_ideal_table),
        ("2", "misaligned Bob state row", c2_misalignment_row),
        ("3", "ideal table key rate", c3_ideal_rate),
        ("4", "per-sifted and per-signal orderings", c4_orderings),
        ("5", "r_sifted crossover near 20 dB", c5_crossover_sifted),
        ("6", "r_total crossover near 10.5 dB", c6_crossover_total),
        ("7", "uncharacterized rate below ideal rate", c7_mode_ordering),
        ("8", "rate gap non-decreasing in epsilon", c8_gap_monotone),
        ("9", "oracle certification, 1e4 attacks per dimension", c9_certification),
        ("10", "optimizer against exhaustive fine grid", c10_fine_grid),
        ("11", "entanglement-based roundtrip", c11_edp),
        ("12", "CLI output is byte-identical across runs", c12_determinism),
    ];
    let mut unexpected = Vec::new();
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.iter().any(|w| w == id) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let red = EXPECTED_RED.contains(&id);
        let tag = match (v.pass, red) {
            (true, false) => "PASS",
            (false, true) => "FAIL (expected)",
            (false, false) => "FAIL",
            (true, true) => "PASS (expected red)",
        };
        println!(
            "[{tag}] {id:>2} {name}: {} ({:.1}s)",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if v.pass == red {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}

fn c1_ideal_table() -> Verdict {
    let t = ideal_table(Dim::Qutrit);
    let mut worst: f64 = 0.0;
    for x in 0..3 {
        for y in 0..3 {
            let matched = if x == y { 1.0 / 3.0 } else { 0.0 };
            worst = worst.max((t.ordinary(x, y) - matched).abs());
            worst = worst.max((t.ordinary_bar(x, y) - 1.0 / 9.0).abs());
            worst = worst.max((t.bar_ordinary(x, y) - 1.0 / 9.0).abs());
        }
    }
    verdict(worst < 1e-12, format!("max error {worst:.2e}"))
}

fn c2_misalignment_row() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let alice = ideal_states(Dim::Qutrit);
    let phi0 = qkd3::qudit::me_state(Dim::Qutrit, 0, 0, &PhaseSet::zero()).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let mu = rng.random_range(0.0..std::f64::consts::TAU);
        let nu = rng.random_range(0.0..std::f64::consts::TAU);
        let mut bob = alice.clone();
        bob[3] = misaligned_state(mu, nu);
        let t = table_from_sources(&alice, &bob, &phi0).unwrap();
        let expected = [
            mu.cos().powi(2) * nu.sin().powi(2) / 3.0,
            mu.sin().powi(2) * nu.sin().powi(2) / 3.0,
            nu.cos().powi(2) / 3.0,
        ];
        for (x, e) in expected.iter().enumerate() {
            worst = worst.max((t.ordinary_bar(x, 0) - e).abs());
        }
    }
    verdict(worst < 1e-12, format!("max error {worst:.2e} over 100 angle pairs"))
}

fn c3_ideal_rate() -> Verdict {
    let r = analyze(&ideal_table(Dim::Qutrit), &OptimizerConfig::default(), Mode::Uncharacterized).unwrap();
    let e = &r.error_report;
    let pass = e.epsilon.abs() <= 1e-12
        && e.qs == 0.0
        && e.qp_bound.abs() <= 1e-12
        && (r.r_sifted - 3f64.log2()).abs() <= 1e-9;
    verdict(
        pass,
        format!(
            "eps {:.2e}, qs {:.2e}, qp {:.2e}, r - log2 3 = {:.2e}",
            e.epsilon,
            e.qs,
            e.qp_bound,
            r.r_sifted - 3f64.log2()
        ),
    )
}

fn c4_orderings() -> Verdict {
    let (mut sifted, mut signal) = (0, 0);
    let mut min_margin = f64::INFINITY;
    for k in 0..100 {
        let q = 0.001 + (0.10 - 0.001) * k as f64 / 99.0;
        let r3 = key_rate_sifted(Dim::Qutrit, q, q).unwrap();
        let r2 = key_rate_sifted(Dim::Qubit, q, q).unwrap();
        sifted += (r3 > r2) as usize;
        signal += (r3 / 6.0 > r2 / 4.0) as usize;
        min_margin = min_margin.min(r3 / 6.0 - r2 / 4.0);
    }
    verdict(
        sifted == 100 && signal == 100,
        format!("r3 > r2 at {sifted}/100, r3/6 > r2/4 at {signal}/100, smallest per-signal margin {min_margin:.3e}"),
    )
}

fn crossover(quantity: Quantity, target: f64) -> Verdict {
    let spec = SweepSpec::default();
    let r = find_crossover(&spec, quantity).unwrap();
    if let Some(loss) = uniform_coefficient_crossover(&spec, quantity) {
        note(
            if quantity == Quantity::RSifted { "5" } else { "6" },
            &format!("with epsilon evaluated at the honest (uniform) coefficients instead of maximized, the crossover is {loss:.2} dB"),
        );
    }
    match r.loss_db {
        Some(loss) => verdict(
            (loss - target).abs() <= 2.0,
            format!("crossover {loss:.2} dB, target {target} +/- 2 dB"),
        ),
        None => verdict(false, r.diagnostic.unwrap_or_default()),
    }
}

/// Same scan and bisection as the CLI, with ε = f(uniform coefficients).
fn uniform_coefficient_crossover(spec: &SweepSpec, quantity: Quantity) -> Option<f64> {
    let gap = |loss: f64| {
        let rate = |dim: Dim| {
            let t = spec.table(loss, dim).unwrap();
            let qs = state_error_rate(&t).unwrap();
            let eps = bound_factor(&t, &SourceCoeffs::uniform(dim)).unwrap().clamp(0.0, 1.0 - qs);
            let r = key_rate_for_bound(dim, qs, (eps + qs).min(1.0)).unwrap();
            match quantity {
                Quantity::RSifted => r,
                Quantity::RTotal => key_rate_total(r, dim),
            }
        };
        rate(Dim::Qutrit) - rate(Dim::Qubit)
    };
    let losses = spec.losses();
    let k = (1..losses.len()).find(|&k| gap(losses[k - 1]) > 0.0 && gap(losses[k]) <= 0.0)?;
    let (mut lo, mut hi) = (losses[k - 1], losses[k]);
    while hi - lo > 0.05 {
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn c5_crossover_sifted() -> Verdict {
    crossover(Quantity::RSifted, 20.0)
}

fn c6_crossover_total() -> Verdict {
    crossover(Quantity::RTotal, 10.5)
}

fn c7_mode_ordering() -> Verdict {
    let sweep = |mode| {
        run_sweep(&SweepSpec {
            dims: vec![Dim::Qutrit],
            mode,
            ..SweepSpec::default()
        })
        .unwrap()
    };
    let (unchar, ideal) = (sweep(Mode::Uncharacterized), sweep(Mode::Ideal));
    let mut bad = Vec::new();
    for (u, i) in unchar.iter().zip(&ideal) {
        let loss = u.loss_db.unwrap();
        let ok = if loss > 0.0 {
            u.report.r_sifted < i.report.r_sifted
        } else {
            u.report.r_sifted <= i.report.r_sifted
        };
        if !ok {
            bad.push(loss);
        }
    }
    verdict(bad.is_empty(), format!("{} loss points, violations at {bad:?}", unchar.len()))
}

fn rate_gap(qs: f64, eps: f64) -> f64 {
    let qp = (qs + eps).min(1.0);
    let r3 = key_rate_for_bound(Dim::Qutrit, qs, qp).unwrap();
    let r2 = key_rate_for_bound(Dim::Qubit, qs, qp).unwrap();
    key_rate_total(r3, Dim::Qutrit) - key_rate_total(r2, Dim::Qubit)
}

fn c8_gap_monotone() -> Verdict {
    let mut details = Vec::new();
    let mut pass = true;
    for qs in [0.01, 0.05] {
        let grid: Vec<f64> = (0..30).map(|k| 0.3 * k as f64 / 29.0).collect();
        let first_drop = grid
            .windows(2)
            .find(|w| rate_gap(qs, w[1]) < rate_gap(qs, w[0]))
            .map(|w| w[0]);
        pass &= first_drop.is_none();
        details.push(match first_drop {
            Some(e) => format!("Qs={qs}: decreases after eps={e:.3}"),
            None => format!("Qs={qs}: non-decreasing"),
        });
        let limited: Vec<f64> = grid.iter().copied().filter(|e| qs + e <= 0.2).collect();
        let ok = limited.windows(2).all(|w| rate_gap(qs, w[1]) >= rate_gap(qs, w[0]));
        note(
            "8",
            &format!("Qs={qs}: non-decreasing on the {} grid points with Qs+eps <= 0.2: {ok}", limited.len()),
        );
    }
    verdict(pass, details.join("; "))
}

#[derive(Default)]
struct CertTally {
    identity: usize,
    constraints: usize,
    chain: usize,
    literal_triangle: usize,
    chain_without_literal: usize,
    sound: usize,
    maximal: usize,
    nontrivial: usize,
    worst: Option<(u64, String)>,
}

fn tally(rows: &[CertRow]) -> CertTally {
    let mut t = CertTally::default();
    for r in rows {
        let c = &r.chain;
        let sound_chain = c.consistency
            && c.triangle_norm
            && c.cauchy_schwarz
            && c.final_bound
            && c.phase_terms
            && c.theorem;
        t.identity += !c.identity as usize;
        t.constraints += !c.constraints as usize;
        t.chain += !(sound_chain && c.triangle) as usize;
        t.literal_triangle += !c.triangle as usize;
        t.chain_without_literal += !sound_chain as usize;
        t.sound += !r.sound as usize;
        t.maximal += !r.maximal as usize;
        t.nontrivial += (r.epsilon < 1.0 - r.qs - 1e-9) as usize;
        if t.worst.is_none() && !(sound_chain && c.triangle && c.identity && c.constraints && r.sound) {
            t.worst = Some((r.seed, format!("{:?}", c)));
        }
    }
    t
}

fn c9_certification() -> Verdict {
    const TRIALS: u64 = 10_000;
    const BASE_SEED: u64 = 2024;
    let config = OptimizerConfig::default();
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for dim in [Dim::Qutrit, Dim::Qubit] {
        let rows: Vec<CertRow> = (0..TRIALS)
            .into_par_iter()
            .map(|i| certify_trial(dim, trial_seed(BASE_SEED, i), &config).unwrap())
            .collect();
        let t = tally(&rows);
        pass &= t.identity == 0 && t.constraints == 0 && t.chain == 0 && t.sound == 0;
        parts.push(format!(
            "dim {dim}: (a) {} (b) {} (c) {} (d) {}",
            t.identity, t.constraints, t.chain, t.sound
        ));
        note(
            "9",
            &format!(
                "dim {dim}: per-component squared triangle step fails in {}; chain with that step in norm form fails in {}; \
                 maximality failures {}; {} of {TRIALS} trials below the 1 - Qs cap",
                t.literal_triangle, t.chain_without_literal, t.maximal, t.nontrivial
            ),
        );
        if let Some((seed, flags)) = t.worst {
            note("9", &format!("dim {dim}: first failing seed {seed}: {flags}"));
        }
    }
    let elapsed = start.elapsed();
    let in_time = elapsed <= Duration::from_secs(30 * 60);
    parts.push(format!("{:.0} s of 1800 s budget", elapsed.as_secs_f64()));
    verdict(pass && in_time, parts.join("; "))
}

/// Independent bound-factor objective on a table scaled to unit matched
/// total.
fn oracle_f(p: &ProbTable, qs: f64, x: usize, y: usize, a: &[f64], b: &[f64]) -> f64 {
    let d = p.dim().value();
    let g = p.bar(x, y).sqrt()
        + (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| a[i] * b[j] * p.ordinary(i, j).sqrt())
            .sum::<f64>();
    let mut best = f64::INFINITY;
    for m in 0..d {
        let c = a[m] * b[m];
        if c <= 0.0 {
            continue;
        }
        let dk: Vec<f64> = (1..d)
            .map(|k| {
                let n = (m + k) % d;
                (c - a[n] * b[n]).abs() * p.ordinary(n, n).sqrt()
            })
            .collect();
        let s = if d == 3 {
            let inner = (g * g + 2.0 * dk[0] * dk[1]).sqrt() + dk[0] + dk[1];
            2.0 * inner * inner / (3.0 * c * c)
        } else {
            (g + dk[0]).powi(2) / (2.0 * c * c)
        };
        best = best.min(s);
    }
    if best.is_finite() {
        best
    } else {
        1.0 - qs
    }
}

/// Upper bound of [`oracle_f`] over coefficient intervals.
fn oracle_f_upper(p: &ProbTable, qs: f64, x: usize, y: usize, a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let d = p.dim().value();
    let mut g = p.bar(x, y).sqrt();
    for i in 0..d {
        for j in 0..d {
            if i != j {
                g += a[i].1 * b[j].1 * p.ordinary(i, j).sqrt();
            }
        }
    }
    let prod = |n: usize| (a[n].0 * b[n].0, a[n].1 * b[n].1);
    let mut best = f64::INFINITY;
    let mut any_undefined = false;
    for m in 0..d {
        let (c_lo, c_hi) = prod(m);
        if c_lo <= 0.0 {
            any_undefined = true;
            continue;
        }
        let dk: Vec<f64> = (1..d)
            .map(|k| {
                let n = (m + k) % d;
                let (n_lo, n_hi) = prod(n);
                (c_hi - n_lo).max(n_hi - c_lo).max(0.0) * p.ordinary(n, n).sqrt()
            })
            .collect();
        let s = if d == 3 {
            let inner = (g * g + 2.0 * dk[0] * dk[1]).sqrt() + dk[0] + dk[1];
            2.0 * inner * inner / (3.0 * c_lo * c_lo)
        } else {
            (g + dk[0]).powi(2) / (2.0 * c_lo * c_lo)
        };
        best = best.min(s);
    }
    if any_undefined {
        // points with every product zero fall back to 1 - qs
        best = best.max(1.0 - qs);
    }
    best
}

fn oracle_feasible(p: &ProbTable, party: Party, row: usize, v: &[f64], tol: f64) -> bool {
    let d = p.dim().value();
    (0..d).all(|i| {
        let (t, q): (f64, Vec<f64>) = match party {
            Party::Alice => (p.at(d + row, i), (0..d).map(|l| p.at(l, i)).collect()),
            Party::Bob => (p.at(i, d + row), (0..d).map(|l| p.at(i, l)).collect()),
        };
        let lin: f64 = (0..d).map(|l| v[l] * q[l].sqrt()).sum();
        let quad: f64 = (0..d).map(|l| v[l] * v[l] * q[l]).sum();
        lin * lin >= t - tol && 2.0 * quad - lin * lin <= t + tol
    })
}

const FINE: usize = 41;
const BLOCK: usize = 5;

/// Feasible fine-grid points of one row, grouped into index blocks with
/// each block's coefficient intervals.
fn row_blocks(p: &ProbTable, party: Party, row: usize, tol: f64) -> Vec<(Vec<(f64, f64)>, Vec<Vec<f64>>)> {
    let d = p.dim().value();
    let Some(bx) = feasible_box(p, party, row, 1.0, tol).unwrap() else {
        return Vec::new();
    };
    let axis = |l: usize, i: usize| bx[l].0 + (bx[l].1 - bx[l].0) * i as f64 / (FINE - 1) as f64;
    let per = FINE.div_ceil(BLOCK);
    let mut blocks = Vec::new();
    for bidx in 0..per.pow(d as u32) {
        let mut corner = vec![0; d];
        let mut r = bidx;
        for c in corner.iter_mut() {
            *c = (r % per) * BLOCK;
            r /= per;
        }
        let mut points = Vec::new();
        for k in 0..BLOCK.pow(d as u32) {
            let mut idx = vec![0; d];
            let mut r = k;
            for (l, i) in idx.iter_mut().enumerate() {
                *i = corner[l] + r % BLOCK;
                r /= BLOCK;
            }
            if idx.iter().any(|&i| i >= FINE) {
                continue;
            }
            let v: Vec<f64> = idx.iter().enumerate().map(|(l, &i)| axis(l, i)).collect();
            if oracle_feasible(p, party, row, &v, tol) {
                points.push(v);
            }
        }
        if points.is_empty() {
            continue;
        }
        let bounds = (0..d)
            .map(|l| {
                let lo = points.iter().map(|v| v[l]).fold(f64::INFINITY, f64::min);
                let hi = points.iter().map(|v| v[l]).fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            })
            .collect();
        blocks.push((bounds, points));
    }
    blocks
}

/// Maximum of the bound factor over the feasible fine grid. Block pairs are
/// visited in order of their upper bound and skipped once the bound cannot
/// beat the incumbent, which leaves the grid maximum unchanged.
fn fine_grid_epsilon(table: &ProbTable) -> f64 {
    let dim = table.dim();
    let sum = table.matched_ordinary_sum();
    let p = ProbTable::new(dim, table.entries().iter().map(|v| v / sum).collect()).unwrap();
    let qs = state_error_rate(&p).unwrap();
    let tol = 1e-9;
    let mut best = f64::NEG_INFINITY;
    for (x, y) in bound_pairs(dim) {
        let ab = row_blocks(&p, Party::Alice, x, tol);
        let bb = row_blocks(&p, Party::Bob, y, tol);
        if ab.is_empty() || bb.is_empty() {
            return 1.0 - qs;
        }
        let mut pairs: Vec<(f64, usize, usize)> = ab
            .iter()
            .enumerate()
            .flat_map(|(i, (ai, _))| {
                let p = &p;
                bb.iter()
                    .enumerate()
                    .map(move |(j, (bj, _))| (oracle_f_upper(p, qs, x, y, ai, bj), i, j))
            })
            .collect();
        pairs.sort_by(|l, r| r.0.total_cmp(&l.0));
        for (upper, i, j) in pairs {
            if upper <= best || best >= 1.0 - qs {
                break;
            }
            let local = ab[i]
                .1
                .par_iter()
                .map(|a| {
                    bb[j]
                        .1
                        .iter()
                        .map(|b| oracle_f(&p, qs, x, y, a, b))
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .reduce(|| f64::NEG_INFINITY, f64::max);
            best = best.max(local);
        }
    }
    best.clamp(0.0, 1.0 - qs)
}

fn c10_fine_grid() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let config = OptimizerConfig::default();
    let mut worst: f64 = 0.0;
    let mut worst_case = String::new();
    let mut nontrivial = 0;
    let (mut above, mut below) = (0, 0);
    for k in 0..20 {
        let dim = if k % 2 == 0 { Dim::Qutrit } else { Dim::Qubit };
        let loss = rng.random_range(0.0..20.0);
        let dark = 10f64.powf(rng.random_range(-6.0..-4.0));
        let table = channel_table(ChannelParams::from_loss_db(loss, dark).unwrap(), dim);
        let eps = epsilon_max(&table, &config).unwrap().epsilon;
        let grid = fine_grid_epsilon(&table);
        let qs = state_error_rate(&table).unwrap();
        nontrivial += (eps < 1.0 - qs - 1e-9) as usize;
        let diff = (eps - grid).abs();
        above += (eps > grid + 1e-3) as usize;
        below += (eps < grid - 1e-3) as usize;
        if diff >= worst {
            worst = diff;
            worst_case = format!("dim {dim}, {loss:.2} dB, dark {dark:.2e}: optimizer {eps:.6}, grid {grid:.6}");
        }
    }
    verdict(
        worst <= 1e-3,
        format!(
            "max |diff| {worst:.2e} ({worst_case}); optimizer above grid by > 1e-3 in {above}/20, \
             below in {below}/20; {nontrivial}/20 below the cap"
        ),
    )
}

fn c11_edp() -> Verdict {
    let channel = ChannelParams::new(1.0, 0.0).unwrap();
    let r = edp_roundtrip(Dim::Qutrit, 100_000, 11, channel, Herald::Complete).unwrap();
    let raw = r.raw_disagreement(BasisKind::Bar);
    let q_ord = r.qber(BasisKind::Ordinary);
    let q_bar = r.qber(BasisKind::Bar);
    verdict(
        q_ord == 0.0 && q_bar == 0.0 && (raw - 2.0 / 3.0).abs() <= 0.01,
        format!(
            "QBER ordinary {q_ord}, bar {q_bar}; uncorrected bar disagreement {raw:.4} over {} sifted",
            r.sifted[1]
        ),
    )
}

fn c12_determinism() -> Verdict {
    let bin = env!("CARGO_BIN_EXE_qkd3");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).env_remove("QKD_SEED").output().unwrap();
        assert!(out.status.success() || out.status.code() == Some(1));
        out.stdout
    };
    let sweep = ["sweep", "--loss-db-end", "24", "--loss-db-step", "3", "--seed", "5"];
    let certify = ["certify", "-n", "40", "--seed", "7"];
    let (s1, s2) = (run(&sweep), run(&sweep));
    let (c1, c2) = (run(&certify), run(&certify));
    verdict(
        s1 == s2 && c1 == c2 && !s1.is_empty() && !c1.is_empty(),
        format!("sweep {} bytes, certify {} bytes", s1.len(), c1.len()),
    )
}
