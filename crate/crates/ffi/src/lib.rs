//! C ABI over the `sfrbsde` library.
//!
//! Objects cross the boundary as opaque handles created and destroyed by this
//! library. Every fallible call returns an [`SfrbsdeStatus`]; on failure the
//! message is kept per thread and read with [`sfrbsde_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sfrbsde::averaging::SweepReport;
use sfrbsde::config::ExperimentConfig;
use sfrbsde::error::Error;
use sfrbsde::harness::{cmd_verify, sweep_checks, sweep_report};
use sfrbsde::kernel::{norm_sq, DeterministicFn, HurstModel, QuadratureSpec};
use sfrbsde::paths::fbm_covariance;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfrbsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numeric = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Opaque experiment configuration.
pub struct SfrbsdeConfig {
    inner: ExperimentConfig,
}

/// Opaque sweep result.
pub struct SfrbsdeSweep {
    inner: SweepReport,
}

/// One epsilon of a sweep. Flags are 1 for pass and 0 for fail.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SfrbsdeSweepRow {
    pub epsilon: f64,
    pub t_lo: f64,
    pub sup_mse: f64,
    pub sup_mse_stderr: f64,
    pub z_err_integral: f64,
    pub z_err_stderr: f64,
    pub exceed_prob: f64,
    pub exceed_stderr: f64,
    pub c4_bound: f64,
    pub lemma1_lhs: f64,
    pub lemma1_rhs: f64,
    pub pass_lemma1: u8,
    pub pass_theorem: u8,
    pub pass_chebyshev: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut s = msg.into();
    s.retain(|c| c != '\0');
    let c = CString::new(s).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> SfrbsdeStatus {
    match e.root() {
        Error::Config(_) => SfrbsdeStatus::Config,
        Error::InvalidParameter(_) => SfrbsdeStatus::InvalidArgument,
        Error::Io(_) => SfrbsdeStatus::Io,
        _ => SfrbsdeStatus::Numeric,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (SfrbsdeStatus, String)>) -> SfrbsdeStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SfrbsdeStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            SfrbsdeStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (SfrbsdeStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SfrbsdeStatus, String) {
    (SfrbsdeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SfrbsdeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            SfrbsdeStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        )
    })
}

/// Message of the last failed call on this thread, or null. Valid until the next call.
#[no_mangle]
pub extern "C" fn sfrbsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sfrbsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// New configuration with every default filled in.
#[no_mangle]
pub extern "C" fn sfrbsde_config_default() -> *mut SfrbsdeConfig {
    Box::into_raw(Box::new(SfrbsdeConfig {
        inner: ExperimentConfig::default(),
    }))
}

/// Parses `key = value` text. On success `*out` owns a new handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_config_parse(
    text: *const c_char,
    out: *mut *mut SfrbsdeConfig,
) -> SfrbsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(text, "text")?;
        let cfg = ExperimentConfig::parse_str(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SfrbsdeConfig { inner: cfg }));
        Ok(())
    })
}

/// Sets one key. The configuration is re-validated; on failure it is left unchanged.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_config_set(
    cfg: *mut SfrbsdeConfig,
    key: *const c_char,
    value: *const c_char,
) -> SfrbsdeStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let key = read_str(key, "key")?;
        let value = read_str(value, "value")?;
        let mut next = cfg.inner.clone();
        next.set(key, value).map_err(lib_err)?;
        let bad = next.violations();
        if !bad.is_empty() {
            return Err(lib_err(Error::Config(bad)));
        }
        cfg.inner = next;
        Ok(())
    })
}

/// Serialised configuration; free with [`sfrbsde_string_free`].
///
/// # Safety
/// `cfg` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_config_to_text(
    cfg: *const SfrbsdeConfig,
    out: *mut *mut c_char,
) -> SfrbsdeStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(cfg.inner.to_text())
            .map_err(|_| (SfrbsdeStatus::InvalidArgument, "nul in config".into()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must come from this library or be null, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_config_free(cfg: *mut SfrbsdeConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs a full sweep. On success `*out` owns a new handle.
///
/// # Safety
/// `cfg` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_run(
    cfg: *const SfrbsdeConfig,
    out: *mut *mut SfrbsdeSweep,
) -> SfrbsdeStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let report = sweep_report(&cfg.inner).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(SfrbsdeSweep { inner: report }));
        Ok(())
    })
}

/// Number of epsilon rows, 0 for a null handle.
///
/// # Safety
/// `sweep` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_len(sweep: *const SfrbsdeSweep) -> usize {
    sweep.as_ref().map_or(0, |s| s.inner.rows.len())
}

/// # Safety
/// `sweep` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_row(
    sweep: *const SfrbsdeSweep,
    index: usize,
    out: *mut SfrbsdeSweepRow,
) -> SfrbsdeStatus {
    guard(|| {
        let s = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = s.inner.rows.get(index).ok_or_else(|| {
            (
                SfrbsdeStatus::OutOfRange,
                format!("row {index} out of range (len {})", s.inner.rows.len()),
            )
        })?;
        *out = SfrbsdeSweepRow {
            epsilon: r.epsilon,
            t_lo: r.t_lo,
            sup_mse: r.sup_mse.mean,
            sup_mse_stderr: r.sup_mse.stderr,
            z_err_integral: r.z_err.mean,
            z_err_stderr: r.z_err.stderr,
            exceed_prob: r.exceed.mean,
            exceed_stderr: r.exceed.stderr,
            c4_bound: r.constants.bound,
            lemma1_lhs: r.lemma1_lhs.mean,
            lemma1_rhs: r.lemma1_rhs.mean,
            pass_lemma1: r.pass_lemma1 as u8,
            pass_theorem: r.pass_theorem as u8,
            pass_chebyshev: r.pass_chebyshev as u8,
        };
        Ok(())
    })
}

/// Fitted log-log slope (NaN when every sup-MSE is zero).
///
/// # Safety
/// `sweep` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_slope(
    sweep: *const SfrbsdeSweep,
    out: *mut f64,
) -> SfrbsdeStatus {
    guard(|| {
        let s = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        match &s.inner.rate {
            Some(r) => {
                *out = r.slope;
                Ok(())
            }
            None => Err((
                SfrbsdeStatus::Numeric,
                s.inner
                    .rate_error
                    .clone()
                    .unwrap_or_else(|| "no rate fit".into()),
            )),
        }
    })
}

/// 1 if every claim-level check of the sweep passes, else 0.
///
/// # Safety
/// `sweep` must come from this library and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_passed(
    sweep: *const SfrbsdeSweep,
    out: *mut u8,
) -> SfrbsdeStatus {
    guard(|| {
        let s = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = sweep_checks(&s.inner).iter().all(|c| c.passed) as u8;
        Ok(())
    })
}

/// Writes the sweep CSV to `path`.
///
/// # Safety
/// `sweep` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_write_csv(
    sweep: *const SfrbsdeSweep,
    path: *const c_char,
) -> SfrbsdeStatus {
    guard(|| {
        let s = sweep.as_ref().ok_or_else(|| null("sweep"))?;
        let path = read_str(path, "path")?;
        let f = File::create(path).map_err(|e| (SfrbsdeStatus::Io, format!("{path}: {e}")))?;
        s.inner.write_csv(BufWriter::new(f)).map_err(lib_err)
    })
}

/// # Safety
/// `sweep` must come from this library or be null, and is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_sweep_free(sweep: *mut SfrbsdeSweep) {
    if !sweep.is_null() {
        drop(Box::from_raw(sweep));
    }
}

/// Runs the reduced-scale invariant suite; `*passed` is 1 when every check passes.
///
/// # Safety
/// `cfg` must come from this library and `passed` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_verify(
    cfg: *const SfrbsdeConfig,
    passed: *mut u8,
) -> SfrbsdeStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let passed = passed.as_mut().ok_or_else(|| null("passed"))?;
        let outcome = cmd_verify(&cfg.inner, None).map_err(lib_err)?;
        *passed = outcome.passed() as u8;
        Ok(())
    })
}

/// `E[B^H_t B^H_s]`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_fbm_covariance(
    t: f64,
    s: f64,
    hurst: f64,
    out: *mut f64,
) -> SfrbsdeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let h = HurstModel::new(hurst).map_err(lib_err)?;
        if !(t >= 0.0 && s >= 0.0) {
            return Err((
                SfrbsdeStatus::InvalidArgument,
                format!("times must be non-negative, got {t}, {s}"),
            ));
        }
        *out = fbm_covariance(t, s, h);
        Ok(())
    })
}

/// `||c||^2_t` for a constant integrand, by the production quadrature.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sfrbsde_norm_sq_constant(
    c: f64,
    t: f64,
    hurst: f64,
    out: *mut f64,
) -> SfrbsdeStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let h = HurstModel::new(hurst).map_err(lib_err)?;
        *out = norm_sq(
            &DeterministicFn::constant(c),
            t,
            h,
            &QuadratureSpec::default(),
        )
        .map_err(lib_err)?;
        Ok(())
    })
}
