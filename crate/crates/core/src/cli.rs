//! Command-line front end: sweeps, crossover search, single-point analysis
//! and oracle certification, all writing CSV.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{certify_trial, trial_seed, CertRow};
use crate::qudit::Dim;
use crate::security::{analyze, KeyRateReport, Mode, OptimizerConfig};
use crate::statistics::{
    channel_table_with, eta_from_loss_db, fmt_f64, ChannelParams, DetectorModel, ProbTable,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const SWEEP_HEADER: &str = "loss_db,eta,dim,mode,qs,epsilon,qp_bound,r_sifted,r_total,feasible_found,optimizer_seed";
pub const CROSSOVER_HEADER: &str = "quantity,found,loss_db,bracket_lo,bracket_hi,dark,mode";
pub const CERTIFY_HEADER: &str = "seed,dim,strength,misaligned,qs,epsilon,feasible_found,f_true,direct_qp,bound_qp,\
identity,constraints,consistency,triangle_literal,triangle_norm,cauchy_schwarz,final_bound,phase_terms,theorem,\
sound,maximal,violation";

/// Bisection stops once the bracket is this narrow (dB).
pub const CROSSOVER_RESOLUTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DimChoice {
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    Both,
}

impl DimChoice {
    pub fn dims(self) -> Vec<Dim> {
        match self {
            DimChoice::Two => vec![Dim::Qubit],
            DimChoice::Three => vec![Dim::Qutrit],
            DimChoice::Both => vec![Dim::Qubit, Dim::Qutrit],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Ideal,
    Uncharacterized,
}

impl From<ModeChoice> for Mode {
    fn from(m: ModeChoice) -> Self {
        match m {
            ModeChoice::Ideal => Mode::Ideal,
            ModeChoice::Uncharacterized => Mode::Uncharacterized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Quantity {
    #[value(name = "r_sifted")]
    RSifted,
    #[value(name = "r_total")]
    RTotal,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::RSifted => "r_sifted",
            Quantity::RTotal => "r_total",
        }
    }

    fn of(self, report: &KeyRateReport) -> f64 {
        match self {
            Quantity::RSifted => report.r_sifted,
            Quantity::RTotal => report.r_total,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "qkd3", version, about = "Qutrit/qubit MDI-QKD key-rate certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Key rates over a range of channel losses.
    Sweep,
    /// Loss at which the qutrit and qubit rates cross.
    Crossover {
        #[arg(long, value_enum, default_value = "r_sifted")]
        quantity: Quantity,
    },
    /// Random-attack certification of the phase-error bound.
    Certify {
        #[arg(long, short = 'n', default_value_t = 100)]
        trials: u64,
    },
    /// One table: a CSV file, or the channel model at --loss-db.
    Analyze {
        #[arg(long, conflicts_with = "loss_db")]
        table: Option<PathBuf>,
        #[arg(long)]
        loss_db: Option<f64>,
    },
}

/// Flags shared by every command. Unset flags fall back to the config file.
#[derive(Debug, Default, clap::Args)]
struct Flags {
    #[arg(long, global = true)]
    loss_db_start: Option<f64>,
    #[arg(long, global = true)]
    loss_db_end: Option<f64>,
    #[arg(long, global = true)]
    loss_db_step: Option<f64>,
    /// Dark-count probability per detector per pulse.
    #[arg(long, global = true)]
    dark: Option<f64>,
    #[arg(long, global = true, value_enum)]
    dim: Option<DimChoice>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeChoice>,
    #[arg(long, global = true)]
    grid_points: Option<usize>,
    #[arg(long, global = true)]
    multistarts: Option<usize>,
    #[arg(long, global = true)]
    refine_iterations: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Two-detector dark-count coefficient of the qubit relay.
    #[arg(long, global = true)]
    qubit_double_dark: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `key = value` file; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

/// Loss range, channel and analysis settings for sweeps and crossovers.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub loss_db_start: f64,
    pub loss_db_end: f64,
    pub loss_db_step: f64,
    pub dark: f64,
    pub dims: Vec<Dim>,
    pub mode: Mode,
    pub optimizer: OptimizerConfig,
    /// Overrides the qubit relay's two-detector dark coefficient.
    pub qubit_double_dark: Option<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            loss_db_start: 0.0,
            loss_db_end: 40.0,
            loss_db_step: 1.0,
            dark: 1e-5,
            dims: vec![Dim::Qubit, Dim::Qutrit],
            mode: Mode::Uncharacterized,
            optimizer: OptimizerConfig::default(),
            qubit_double_dark: None,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.loss_db_start, self.loss_db_end, self.loss_db_step]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.loss_db_start > self.loss_db_end || self.loss_db_step <= 0.0 {
            return Err(Error::Config(format!(
                "need loss_db_start <= loss_db_end and step > 0, got {} .. {} step {}",
                self.loss_db_start, self.loss_db_end, self.loss_db_step
            )));
        }
        if self.dims.is_empty() {
            return Err(Error::Config("no dimensions selected".into()));
        }
        if let Some(c) = self.qubit_double_dark {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("qubit_double_dark must be >= 0, got {c}")));
            }
        }
        ChannelParams::new(1.0, self.dark)?;
        self.optimizer.validate()
    }

    /// Loss grid from start to end inclusive.
    pub fn losses(&self) -> Vec<f64> {
        let n = ((self.loss_db_end - self.loss_db_start) / self.loss_db_step + 1e-9).floor() as usize;
        (0..=n)
            .map(|k| self.loss_db_start + k as f64 * self.loss_db_step)
            .collect()
    }

    fn detector(&self, dim: Dim) -> DetectorModel {
        let mut model = DetectorModel::for_dim(dim);
        if let (Dim::Qubit, Some(c)) = (dim, self.qubit_double_dark) {
            model.double_dark = c;
        }
        model
    }

    pub fn table(&self, loss_db: f64, dim: Dim) -> Result<ProbTable> {
        let params = ChannelParams::from_loss_db(loss_db, self.dark)?;
        Ok(channel_table_with(params, dim, &self.detector(dim)))
    }

    pub fn point(&self, loss_db: f64, dim: Dim) -> Result<SweepRow> {
        let report = analyze(&self.table(loss_db, dim)?, &self.optimizer, self.mode)?;
        Ok(SweepRow {
            loss_db: Some(loss_db),
            mode: self.mode,
            optimizer_seed: self.optimizer.seed,
            report,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    /// Absent when the table came from a file.
    pub loss_db: Option<f64>,
    pub mode: Mode,
    pub optimizer_seed: u64,
    pub report: KeyRateReport,
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        let e = &r.error_report;
        let (loss, eta) = match self.loss_db {
            Some(l) => (fmt_f64(l), fmt_f64(eta_from_loss_db(l))),
            None => (String::new(), String::new()),
        };
        format!(
            "{loss},{eta},{},{},{},{},{},{},{},{},{}",
            r.dim,
            self.mode,
            fmt_f64(e.qs),
            fmt_f64(e.epsilon),
            fmt_f64(e.qp_bound),
            fmt_f64(r.r_sifted),
            fmt_f64(r.r_total),
            e.feasible_found,
            self.optimizer_seed
        )
    }
}

/// Every `(loss, dim)` point, in ascending `(loss, dim)` order.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let mut dims = spec.dims.clone();
    dims.sort_by_key(|d| d.value());
    dims.dedup();
    let points: Vec<(f64, Dim)> = spec
        .losses()
        .into_iter()
        .flat_map(|l| dims.iter().map(move |&d| (l, d)))
        .collect();
    points.par_iter().map(|&(l, d)| spec.point(l, d)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverResult {
    pub quantity: Quantity,
    /// Midpoint of the final bracket; `None` when no sign change was found.
    pub loss_db: Option<f64>,
    pub bracket: Option<(f64, f64)>,
    pub diagnostic: Option<String>,
}

impl CrossoverResult {
    pub fn to_csv(&self, spec: &SweepSpec) -> String {
        let (loss, lo, hi) = match (self.loss_db, self.bracket) {
            (Some(l), Some((a, b))) => (fmt_f64(l), fmt_f64(a), fmt_f64(b)),
            _ => Default::default(),
        };
        format!(
            "{},{},{loss},{lo},{hi},{},{}",
            self.quantity.name(),
            self.loss_db.is_some(),
            fmt_f64(spec.dark),
            spec.mode
        )
    }
}

/// First loss at which `r(3) - r(2)` changes sign: a scan over the spec's
/// loss grid, then bisection down to [`CROSSOVER_RESOLUTION`].
pub fn find_crossover(spec: &SweepSpec, quantity: Quantity) -> Result<CrossoverResult> {
    spec.validate()?;
    if !(spec.dims.contains(&Dim::Qubit) && spec.dims.contains(&Dim::Qutrit)) {
        return Err(Error::Config("crossover needs both dimensions".into()));
    }
    let gap = |loss: f64| -> Result<f64> {
        let (r3, r2) = rayon::join(
            || spec.point(loss, Dim::Qutrit),
            || spec.point(loss, Dim::Qubit),
        );
        Ok(quantity.of(&r3?.report) - quantity.of(&r2?.report))
    };
    let losses = spec.losses();
    let gaps: Vec<f64> = losses.par_iter().map(|&l| gap(l)).collect::<Result<_>>()?;
    let Some(k) = (1..losses.len()).find(|&k| gaps[k - 1] * gaps[k] <= 0.0 && gaps[k - 1] != 0.0)
    else {
        return Ok(CrossoverResult {
            quantity,
            loss_db: None,
            bracket: None,
            diagnostic: Some(format!(
                "no sign change of {} difference (dim 3 - dim 2) in [{}, {}] dB; first {:.6e}, last {:.6e}",
                quantity.name(),
                spec.loss_db_start,
                losses[losses.len() - 1],
                gaps[0],
                gaps[gaps.len() - 1]
            )),
        });
    };
    let (mut lo, mut hi) = (losses[k - 1], losses[k]);
    let lo_sign = gaps[k - 1].signum();
    while hi - lo > CROSSOVER_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        let g = gap(mid)?;
        if g != 0.0 && g.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CrossoverResult {
        quantity,
        loss_db: Some(0.5 * (lo + hi)),
        bracket: Some((lo, hi)),
        diagnostic: None,
    })
}

pub fn cert_row_csv(row: &CertRow) -> String {
    let c = &row.chain;
    let mut s = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        row.seed,
        row.dim,
        fmt_f64(row.strength),
        row.misaligned,
        fmt_f64(row.qs),
        fmt_f64(row.epsilon),
        row.feasible_found,
        fmt_f64(row.f_true),
        fmt_f64(row.direct_qp),
        fmt_f64(row.bound_qp)
    );
    for flag in [
        c.identity,
        c.constraints,
        c.consistency,
        c.triangle,
        c.triangle_norm,
        c.cauchy_schwarz,
        c.final_bound,
        c.phase_terms,
        c.theorem,
        row.sound,
        row.maximal,
        row.violation(),
    ] {
        let _ = write!(s, ",{flag}");
    }
    s
}

/// Runs `n` trials per dimension, writing rows as each batch completes.
/// Returns the seeds and dimensions of violating trials.
pub fn run_certify(
    n: u64,
    seed: u64,
    dims: &[Dim],
    config: &OptimizerConfig,
    out: &mut dyn Write,
) -> Result<Vec<(Dim, u64)>> {
    if n == 0 {
        return Err(Error::Config("certify needs at least one trial".into()));
    }
    config.validate()?;
    const BATCH: u64 = 64;
    writeln!(out, "{CERTIFY_HEADER}")?;
    let mut violations = Vec::new();
    for &dim in dims {
        let mut start = 0;
        while start < n {
            let end = (start + BATCH).min(n);
            let rows: Vec<CertRow> = (start..end)
                .into_par_iter()
                .map(|i| certify_trial(dim, trial_seed(seed, i), config))
                .collect::<Result<_>>()?;
            for row in &rows {
                writeln!(out, "{}", cert_row_csv(row))?;
                if row.violation() {
                    violations.push((dim, row.seed));
                }
            }
            start = end;
        }
    }
    out.flush()?;
    Ok(violations)
}

/// Parses `key = value` lines; `#` starts a comment, `_` and `-` are
/// interchangeable in keys.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        let key = k.trim().replace('_', "-");
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1)));
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

const KNOWN_KEYS: &[&str] = &[
    "loss-db-start",
    "loss-db-end",
    "loss-db-step",
    "dark",
    "dim",
    "mode",
    "grid-points",
    "multistarts",
    "refine-iterations",
    "seed",
    "qubit-double-dark",
    "out",
];

fn from_file<T: std::str::FromStr>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    file.get(key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
        })
        .transpose()
}

fn enum_from_file<T: ValueEnum>(file: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    file.get(key)
        .map(|v| T::from_str(v, false).map_err(|_| Error::Config(format!("bad value {v:?} for {key}"))))
        .transpose()
}

/// Settings after merging flags over the config file over defaults.
struct Resolved {
    spec: SweepSpec,
    dim: DimChoice,
    out: Option<PathBuf>,
}

fn resolve(flags: Flags, env_seed: Option<&str>) -> Result<Resolved> {
    let file = match &flags.config {
        Some(path) => parse_config(&std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?)?,
        None => BTreeMap::new(),
    };
    let env_seed = env_seed
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("QKD_SEED is not an integer: {s:?}")))
        })
        .transpose()?;
    let defaults = SweepSpec::default();
    let base = defaults.optimizer.clone();
    let seed = match flags.seed {
        Some(s) => s,
        None => from_file(&file, "seed")?.or(env_seed).unwrap_or(base.seed),
    };
    let optimizer = OptimizerConfig {
        grid_points: pick(flags.grid_points, &file, "grid-points", base.grid_points)?,
        multistarts: pick(flags.multistarts, &file, "multistarts", base.multistarts)?,
        refine_iterations: pick(flags.refine_iterations, &file, "refine-iterations", base.refine_iterations)?,
        seed,
        ..base
    };
    let dim = match flags.dim {
        Some(d) => d,
        None => enum_from_file(&file, "dim")?.unwrap_or(DimChoice::Both),
    };
    let mode: Mode = match flags.mode {
        Some(m) => m,
        None => enum_from_file(&file, "mode")?.unwrap_or(ModeChoice::Uncharacterized),
    }
    .into();
    let spec = SweepSpec {
        loss_db_start: pick(flags.loss_db_start, &file, "loss-db-start", defaults.loss_db_start)?,
        loss_db_end: pick(flags.loss_db_end, &file, "loss-db-end", defaults.loss_db_end)?,
        loss_db_step: pick(flags.loss_db_step, &file, "loss-db-step", defaults.loss_db_step)?,
        dark: pick(flags.dark, &file, "dark", defaults.dark)?,
        dims: dim.dims(),
        mode,
        optimizer,
        qubit_double_dark: match flags.qubit_double_dark {
            Some(c) => Some(c),
            None => from_file(&file, "qubit-double-dark")?,
        },
    };
    let out = flags.out.or_else(|| file.get("out").map(PathBuf::from));
    Ok(Resolved { spec, dim, out })
}

fn pick<T: std::str::FromStr>(
    flag: Option<T>,
    file: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(from_file(file, key)?.unwrap_or(default)),
    }
}

fn open_out<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => Box::new(stdout),
    })
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli, env_seed, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn execute(cli: Cli, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32> {
    let Resolved { spec, dim, out } = resolve(cli.flags, env_seed)?;
    match cli.command {
        Command::Sweep => {
            let rows = run_sweep(&spec)?;
            let mut text = format!("{SWEEP_HEADER}\n");
            for row in &rows {
                text.push_str(&row.to_csv());
                text.push('\n');
            }
            let mut w = open_out(out.as_deref(), stdout)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
            Ok(EXIT_OK)
        }
        Command::Crossover { quantity } => {
            if dim != DimChoice::Both {
                return Err(Error::Config("crossover compares both dimensions; use --dim both".into()));
            }
            let result = find_crossover(&spec, quantity)?;
            if let Some(msg) = &result.diagnostic {
                writeln!(stderr, "{msg}")?;
            }
            let mut w = open_out(out.as_deref(), stdout)?;
            writeln!(w, "{CROSSOVER_HEADER}\n{}", result.to_csv(&spec))?;
            w.flush()?;
            Ok(EXIT_OK)
        }
        Command::Certify { trials } => {
            let mut w = open_out(out.as_deref(), stdout)?;
            let violations = run_certify(trials, spec.optimizer.seed, &spec.dims, &spec.optimizer, &mut *w)?;
            drop(w);
            for (d, seed) in &violations {
                writeln!(stderr, "violation: dim={d} seed={seed}")?;
            }
            Ok(if violations.is_empty() { EXIT_OK } else { EXIT_VIOLATION })
        }
        Command::Analyze { table, loss_db } => {
            spec.optimizer.validate()?;
            let rows: Vec<SweepRow> = match table {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                    let table = ProbTable::from_csv(&text)?;
                    vec![SweepRow {
                        loss_db: None,
                        mode: spec.mode,
                        optimizer_seed: spec.optimizer.seed,
                        report: analyze(&table, &spec.optimizer, spec.mode)?,
                    }]
                }
                None => {
                    let loss = loss_db.unwrap_or(spec.loss_db_start);
                    spec.dims
                        .iter()
                        .map(|&d| spec.point(loss, d))
                        .collect::<Result<_>>()?
                }
            };
            let mut w = open_out(out.as_deref(), stdout)?;
            writeln!(w, "{SWEEP_HEADER}")?;
            for row in &rows {
                writeln!(w, "{}", row.to_csv())?;
            }
            w.flush()?;
            Ok(EXIT_OK)
        }
    }
}

/// Entry point for the binary.
pub fn main_entry() -> i32 {
    let env_seed = std::env::var("QKD_SEED").ok();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(
        std::env::args_os(),
        env_seed.as_deref(),
        &mut stdout.lock(),
        &mut stderr.lock(),
    )
}
