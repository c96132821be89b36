//! C ABI over the qkd3 library.
//!
//! Tables are opaque heap handles released with `qkd3_table_free`. Every
//! fallible call returns a `Qkd3Status`; the message of the last failure on
//! the calling thread is available from `qkd3_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qkd3::qudit::Dim;
use qkd3::security::{analyze, key_rate_sifted, Mode, OptimizerConfig};
use qkd3::statistics::{channel_table, ideal_table, ChannelParams, ProbTable};
use qkd3::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Qkd3Status {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnsupportedDimension = 3,
    ZeroDenominator = 4,
    MalformedTable = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

impl From<&Error> for Qkd3Status {
    fn from(e: &Error) -> Self {
        match e {
            Error::UnsupportedDimension(_) => Qkd3Status::UnsupportedDimension,
            Error::ZeroDenominator | Error::DegenerateAttack => Qkd3Status::ZeroDenominator,
            Error::MalformedTable(_) | Error::DimensionMismatch { .. } => Qkd3Status::MalformedTable,
            _ => Qkd3Status::InvalidArgument,
        }
    }
}

/// Opaque probability table.
pub struct Qkd3Table {
    inner: ProbTable,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Qkd3OptimizerConfig {
    pub grid_points: usize,
    pub refine_iterations: usize,
    pub multistarts: usize,
    pub seed: u64,
    pub constraint_tolerance: f64,
    pub coeff_max: f64,
}

impl From<OptimizerConfig> for Qkd3OptimizerConfig {
    fn from(c: OptimizerConfig) -> Self {
        Self {
            grid_points: c.grid_points,
            refine_iterations: c.refine_iterations,
            multistarts: c.multistarts,
            seed: c.seed,
            constraint_tolerance: c.constraint_tolerance,
            coeff_max: c.coeff_max,
        }
    }
}

impl From<Qkd3OptimizerConfig> for OptimizerConfig {
    fn from(c: Qkd3OptimizerConfig) -> Self {
        Self {
            grid_points: c.grid_points,
            refine_iterations: c.refine_iterations,
            multistarts: c.multistarts,
            seed: c.seed,
            constraint_tolerance: c.constraint_tolerance,
            coeff_max: c.coeff_max,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Qkd3Report {
    pub dim: u32,
    pub qs: f64,
    pub epsilon: f64,
    pub qp_bound: f64,
    pub r_sifted: f64,
    pub r_total: f64,
    pub feasible_found: bool,
}

pub const QKD3_MODE_IDEAL: u32 = 0;
pub const QKD3_MODE_UNCHARACTERIZED: u32 = 1;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic for `qkd3_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (Qkd3Status, String)>) -> Qkd3Status {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Qkd3Status::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("panic inside qkd3");
            Qkd3Status::Panic
        }
    }
}

fn lib<T>(r: qkd3::Result<T>) -> Result<T, (Qkd3Status, String)> {
    r.map_err(|e| (Qkd3Status::from(&e), e.to_string()))
}

fn null(what: &str) -> (Qkd3Status, String) {
    (Qkd3Status::NullPointer, format!("{what} is null"))
}

fn dim(value: u32) -> Result<Dim, (Qkd3Status, String)> {
    lib(Dim::try_from(value as usize))
}

fn emit(table: ProbTable, out: *mut *mut Qkd3Table) -> Result<(), (Qkd3Status, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    let handle = Box::into_raw(Box::new(Qkd3Table { inner: table }));
    // SAFETY: checked non-null; the caller provides a writable slot.
    unsafe { *out = handle };
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn qkd3_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn qkd3_status_name(status: Qkd3Status) -> *const c_char {
    let s: &'static [u8] = match status {
        Qkd3Status::Ok => b"ok\0",
        Qkd3Status::NullPointer => b"null pointer\0",
        Qkd3Status::InvalidArgument => b"invalid argument\0",
        Qkd3Status::UnsupportedDimension => b"unsupported dimension\0",
        Qkd3Status::ZeroDenominator => b"zero denominator\0",
        Qkd3Status::MalformedTable => b"malformed table\0",
        Qkd3Status::BufferTooSmall => b"buffer too small\0",
        Qkd3Status::Panic => b"panic\0",
    };
    s.as_ptr().cast()
}

/// Noise-free table for `dim` in {2, 3}.
///
/// # Safety
/// `out` must be null or point to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn qkd3_table_ideal(dim_value: u32, out: *mut *mut Qkd3Table) -> Qkd3Status {
    guard(|| emit(ideal_table(dim(dim_value)?), out))
}

/// Channel-model table at `loss_db` total loss and dark-count probability
/// `dark` per detector.
///
/// # Safety
/// As [`qkd3_table_ideal`].
#[no_mangle]
pub unsafe extern "C" fn qkd3_table_channel(
    dim_value: u32,
    loss_db: f64,
    dark: f64,
    out: *mut *mut Qkd3Table,
) -> Qkd3Status {
    guard(|| {
        let params = lib(ChannelParams::from_loss_db(loss_db, dark))?;
        emit(channel_table(params, dim(dim_value)?), out)
    })
}

/// Table from `(2d)²` row-major entries, Alice's setting indexing rows.
///
/// # Safety
/// `entries` must point to `len` readable doubles; `out` as in
/// [`qkd3_table_ideal`].
#[no_mangle]
pub unsafe extern "C" fn qkd3_table_from_entries(
    dim_value: u32,
    entries: *const f64,
    len: usize,
    out: *mut *mut Qkd3Table,
) -> Qkd3Status {
    guard(|| {
        if entries.is_null() {
            return Err(null("entries"));
        }
        // SAFETY: caller guarantees `len` readable elements.
        let slice = unsafe { std::slice::from_raw_parts(entries, len) };
        emit(lib(ProbTable::new(dim(dim_value)?, slice.to_vec()))?, out)
    })
}

/// Copies the entries into `buf`. `needed` (if non-null) receives the
/// entry count, also when `cap` is too small.
///
/// # Safety
/// `table` must be a live handle or null; `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn qkd3_table_entries(
    table: *const Qkd3Table,
    buf: *mut f64,
    cap: usize,
    needed: *mut usize,
) -> Qkd3Status {
    guard(|| {
        // SAFETY: caller guarantees a live handle when non-null.
        let table = unsafe { table.as_ref() }.ok_or_else(|| null("table"))?;
        let entries = table.inner.entries();
        if !needed.is_null() {
            // SAFETY: checked non-null.
            unsafe { *needed = entries.len() };
        }
        if cap < entries.len() {
            return Err((
                Qkd3Status::BufferTooSmall,
                format!("need {} entries, got {cap}", entries.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        // SAFETY: `buf` holds at least `entries.len()` doubles.
        unsafe { ptr::copy_nonoverlapping(entries.as_ptr(), buf, entries.len()) };
        Ok(())
    })
}

/// # Safety
/// `table` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qkd3_table_free(table: *mut Qkd3Table) {
    if !table.is_null() {
        // SAFETY: handle came from Box::into_raw and is freed once.
        drop(unsafe { Box::from_raw(table) });
    }
}

#[no_mangle]
pub extern "C" fn qkd3_optimizer_default() -> Qkd3OptimizerConfig {
    OptimizerConfig::default().into()
}

/// Key-rate analysis of `table`. A null `config` uses the defaults; `mode`
/// is one of the `QKD3_MODE_*` constants.
///
/// # Safety
/// `table` a live handle or null, `config` null or readable, `out` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn qkd3_analyze(
    table: *const Qkd3Table,
    config: *const Qkd3OptimizerConfig,
    mode: u32,
    out: *mut Qkd3Report,
) -> Qkd3Status {
    guard(|| {
        // SAFETY: caller guarantees validity when non-null.
        let table = unsafe { table.as_ref() }.ok_or_else(|| null("table"))?;
        let config: OptimizerConfig = match unsafe { config.as_ref() } {
            Some(c) => (*c).into(),
            None => OptimizerConfig::default(),
        };
        let mode = match mode {
            QKD3_MODE_IDEAL => Mode::Ideal,
            QKD3_MODE_UNCHARACTERIZED => Mode::Uncharacterized,
            other => return Err((Qkd3Status::InvalidArgument, format!("unknown mode {other}"))),
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lib(analyze(&table.inner, &config, mode))?;
        let report = Qkd3Report {
            dim: r.dim.value() as u32,
            qs: r.error_report.qs,
            epsilon: r.error_report.epsilon,
            qp_bound: r.error_report.qp_bound,
            r_sifted: r.r_sifted,
            r_total: r.r_total,
            feasible_found: r.error_report.feasible_found,
        };
        // SAFETY: checked non-null.
        unsafe { *out = report };
        Ok(())
    })
}

/// Key bits per sifted symbol for state error `qs` and phase error `qp`.
///
/// # Safety
/// `out` must be null or writable.
#[no_mangle]
pub unsafe extern "C" fn qkd3_key_rate_sifted(dim_value: u32, qs: f64, qp: f64, out: *mut f64) -> Qkd3Status {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = lib(key_rate_sifted(dim(dim_value)?, qs, qp))?;
        // SAFETY: checked non-null.
        unsafe { *out = r };
        Ok(())
    })
}
