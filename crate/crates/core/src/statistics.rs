//! BSM success-probability tables for ideal, misaligned and lossy sources.
//!
//! Settings are indexed `0..d` for the ordinary basis followed by `d..2d` for
//! the bar basis. Only a `Φ0`-discriminating measurement defines the tables.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::qudit::{
    me_state, mub_bar_basis, ordinary_basis, projection_prob, BasisKind, BasisLabel, Dim,
    PhaseSet, StateVector,
};

/// A party's preparation setting; same shape as a basis label.
pub type SettingLabel = BasisLabel;

/// All `2d` settings in table order.
pub fn settings(dim: Dim) -> Vec<SettingLabel> {
    [BasisKind::Ordinary, BasisKind::Bar]
        .into_iter()
        .flat_map(|kind| (0..dim.value()).map(move |index| SettingLabel { kind, index }))
        .collect()
}

fn setting_index(dim: Dim, label: SettingLabel) -> usize {
    match label.kind {
        BasisKind::Ordinary => label.index,
        BasisKind::Bar => dim.value() + label.index,
    }
}

fn setting_name(dim: Dim, x: usize) -> String {
    let d = dim.value();
    if x < d {
        x.to_string()
    } else {
        format!("{}bar", x - d)
    }
}

/// Success probabilities `p(x, y)` for every pair of settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTable {
    dim: Dim,
    entries: Vec<f64>,
}

impl ProbTable {
    /// Row-major `(2d) × (2d)` entries, Alice's setting selecting the row.
    pub fn new(dim: Dim, entries: Vec<f64>) -> Result<Self> {
        let n = 2 * dim.value();
        if entries.len() != n * n {
            return Err(Error::MalformedTable(format!(
                "expected {} entries, found {}",
                n * n,
                entries.len()
            )));
        }
        if let Some(&bad) = entries.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability(bad));
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, alice: SettingLabel, bob: SettingLabel) -> f64 {
        self.at(setting_index(self.dim, alice), setting_index(self.dim, bob))
    }

    /// Entry by raw setting indices.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.entries[x * 2 * self.dim.value() + y]
    }

    /// `p(i, j)` for ordinary settings.
    pub fn ordinary(&self, i: usize, j: usize) -> f64 {
        self.at(i, j)
    }

    /// `p(ī, j̄)`.
    pub fn bar(&self, i: usize, j: usize) -> f64 {
        let d = self.dim.value();
        self.at(d + i, d + j)
    }

    /// `p(j̄, i)`: Alice bar, Bob ordinary.
    pub fn bar_ordinary(&self, j: usize, i: usize) -> f64 {
        self.at(self.dim.value() + j, i)
    }

    /// `p(i, k̄)`: Alice ordinary, Bob bar.
    pub fn ordinary_bar(&self, i: usize, k: usize) -> f64 {
        self.at(i, self.dim.value() + k)
    }

    /// Sum of the `d²` matched-ordinary entries.
    pub fn matched_ordinary_sum(&self) -> f64 {
        let d = self.dim.value();
        (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| self.ordinary(i, j))
            .sum()
    }

    /// CSV with a header row; cells use 17 significant digits.
    pub fn to_csv(&self) -> String {
        let n = 2 * self.dim.value();
        let mut out = String::from("setting");
        for y in 0..n {
            out.push(',');
            out.push_str(&setting_name(self.dim, y));
        }
        out.push('\n');
        for x in 0..n {
            out.push_str(&setting_name(self.dim, x));
            for y in 0..n {
                let _ = write!(out, ",{}", fmt_f64(self.at(x, y)));
            }
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`ProbTable::to_csv`]; the dimension is
    /// inferred from the header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| Error::MalformedTable("empty input".into()))?;
        let n = header.split(',').count() - 1;
        let dim = Dim::try_from(n / 2)
            .ok()
            .filter(|d| 2 * d.value() == n)
            .ok_or_else(|| Error::MalformedTable(format!("{n} setting columns")))?;
        let expected: Vec<String> = (0..n).map(|y| setting_name(dim, y)).collect();
        let got: Vec<&str> = header.split(',').skip(1).map(str::trim).collect();
        if got != expected {
            return Err(Error::MalformedTable(format!("unexpected header {header:?}")));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (x, line) in lines.enumerate() {
            let mut cells = line.split(',').map(str::trim);
            let name = cells.next().unwrap_or_default();
            if x >= n || name != setting_name(dim, x) {
                return Err(Error::MalformedTable(format!("unexpected row {line:?}")));
            }
            for cell in cells {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::MalformedTable(format!("bad number {cell:?}")))?;
                entries.push(v);
            }
        }
        ProbTable::new(dim, entries)
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Entry `(x, y)` is `|<target| alice[x] ⊗ bob[y]>|²`.
pub fn table_from_sources(
    alice: &[StateVector],
    bob: &[StateVector],
    target: &StateVector,
) -> Result<ProbTable> {
    let dim = target.dim();
    let n = 2 * dim.value();
    for states in [alice, bob] {
        if states.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: states.len(),
            });
        }
        if let Some(s) = states.iter().find(|s| s.dim() != dim || s.is_joint()) {
            return Err(Error::DimensionMismatch {
                expected: dim.value(),
                found: s.amps().len(),
            });
        }
    }
    let mut entries = Vec::with_capacity(n * n);
    for a in alice {
        for b in bob {
            entries.push(projection_prob(&a.tensor(b)?, target)?);
        }
    }
    ProbTable::new(dim, entries)
}

/// The `2d` ideal states in table order.
pub fn ideal_states(dim: Dim) -> Vec<StateVector> {
    let mut states = ordinary_basis(dim);
    states.extend(mub_bar_basis(dim));
    states
}

/// Ideal sources against a `Φ0`-only measurement.
pub fn ideal_table(dim: Dim) -> ProbTable {
    let states = ideal_states(dim);
    let phi0 = me_state(dim, 0, 0, &PhaseSet::zero()).expect("valid indices");
    table_from_sources(&states, &states, &phi0).expect("consistent ideal states")
}

/// Combined transmittance and per-detector dark-count probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    eta: f64,
    dark: f64,
}

impl ChannelParams {
    pub fn new(eta: f64, dark: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidParameter(format!("eta {eta} outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&dark) {
            return Err(Error::InvalidParameter(format!("dark {dark} outside [0, 1)")));
        }
        Ok(Self { eta, dark })
    }

    /// `η = 10^(-loss_db / 10)`.
    pub fn from_loss_db(loss_db: f64, dark: f64) -> Result<Self> {
        if !loss_db.is_finite() || loss_db < 0.0 {
            return Err(Error::InvalidParameter(format!("loss {loss_db} dB must be >= 0")));
        }
        Self::new(eta_from_loss_db(loss_db), dark)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn dark(&self) -> f64 {
        self.dark
    }
}

pub fn eta_from_loss_db(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

/// Detector counting assumptions behind the channel formula.
///
/// A two-photon herald leaves `idle_detectors` silent. One photon plus one
/// dark click contributes `single_dark · η(1-η)d`, two dark clicks contribute
/// `double_dark · (1-η)²d²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    pub idle_detectors: i32,
    pub single_dark: f64,
    pub double_dark: f64,
}

impl DetectorModel {
    /// Six detectors for qutrits, four for qubits.
    pub fn for_dim(dim: Dim) -> Self {
        match dim {
            Dim::Qutrit => Self {
                idle_detectors: 4,
                single_dark: 2.0,
                double_dark: 3.0,
            },
            Dim::Qubit => Self {
                idle_detectors: 2,
                single_dark: 2.0,
                double_dark: 2.0,
            },
        }
    }

    /// `(signal weight, encoding-independent noise)` for one table entry.
    pub fn terms(&self, params: ChannelParams) -> (f64, f64) {
        let (eta, d) = (params.eta, params.dark);
        let quiet = (1.0 - d).powi(self.idle_detectors);
        let signal = eta * eta * quiet;
        let noise = self.single_dark * eta * (1.0 - eta) * d * quiet
            + self.double_dark * (1.0 - eta).powi(2) * d * d * quiet;
        (signal, noise)
    }
}

/// Lossy, noisy channel with the default detector model for `dim`.
pub fn channel_table(params: ChannelParams, dim: Dim) -> ProbTable {
    channel_table_with(params, dim, &DetectorModel::for_dim(dim))
}

/// `p(x, y) = signal · Π(x, y) + noise`, `Π` being the ideal table.
pub fn channel_table_with(params: ChannelParams, dim: Dim, model: &DetectorModel) -> ProbTable {
    let ideal = ideal_table(dim);
    let (signal, noise) = model.terms(params);
    let entries = ideal
        .entries()
        .iter()
        .map(|pi| (signal * pi + noise).clamp(0.0, 1.0))
        .collect();
    ProbTable::new(dim, entries).expect("entries clamped to [0, 1]")
}
