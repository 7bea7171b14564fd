//! C ABI over the `mtpshift` library.
//!
//! Policies are opaque heap handles created by `*_new` and released by the
//! matching `*_free`. Every fallible call returns an [`MtpStatus`]; on
//! failure the message is kept per thread and can be read with
//! [`mtp_last_error_message`]. Strings returned to C are freed with
//! [`mtp_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mtpshift::config::RunConfig;
use mtpshift::inference;
use mtpshift::panel::compute_rate;
use mtpshift::policy::{BoundedAdditiveShift, LongitudinalDelayPolicy, PointShift};
use mtpshift::Error;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MtpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    UndefinedRate = 4,
    SingleCluster = 5,
    Identification = 6,
    Io = 7,
    Internal = 8,
    Panic = 9,
}

/// A point-exposure shift.
pub struct MtpShift(PointShift);

/// A delayed-enactment policy for binary trajectories.
pub struct MtpDelayPolicy(LongitudinalDelayPolicy);

/// Standard error and Wald interval of an estimate.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MtpInterval {
    pub estimate: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_clusters: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn status_of(e: &Error) -> MtpStatus {
    match e {
        Error::Domain(_) => MtpStatus::Domain,
        Error::UndefinedRate => MtpStatus::UndefinedRate,
        Error::SingleCluster => MtpStatus::SingleCluster,
        Error::Identification(_) => MtpStatus::Identification,
        Error::Io { .. } => MtpStatus::Io,
        Error::InvalidInput(_) | Error::Config(_) | Error::MissingColumn { .. } | Error::Csv(_) | Error::Data(_) => {
            MtpStatus::InvalidArgument
        }
        _ => MtpStatus::Internal,
    }
}

fn guard<F>(f: F) -> MtpStatus
where
    F: FnOnce() -> Result<(), MtpStatus>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MtpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside mtpshift");
            MtpStatus::Panic
        }
    }
}

fn lib<T>(r: mtpshift::Result<T>) -> Result<T, MtpStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), MtpStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        Err(MtpStatus::NullPointer)
    } else {
        Ok(())
    }
}

/// Slice view of a C array; `len == 0` accepts a null pointer.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], MtpStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], MtpStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, len))
}

/// Last error message on this thread, or null. The caller owns the string.
#[no_mangle]
pub extern "C" fn mtp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null_mut(), |s| s.clone().into_raw()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mtp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mtp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Bounded additive shift: `a + delta2` if `a <= a_max - delta2`, else
/// `a + delta1` if `a <= a_max - delta1`, else `a`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtp_shift_bounded_new(delta1: f64, delta2: f64, a_max: f64, out: *mut *mut MtpShift) -> MtpStatus {
    guard(|| {
        non_null(out, "out")?;
        let s = lib(BoundedAdditiveShift::new(delta1, delta2, a_max))?;
        *out = Box::into_raw(Box::new(MtpShift(PointShift::Bounded(s))));
        Ok(())
    })
}

/// Unbounded shift `a + delta`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtp_shift_additive_new(delta: f64, out: *mut *mut MtpShift) -> MtpStatus {
    guard(|| {
        non_null(out, "out")?;
        if !delta.is_finite() {
            set_error("delta must be finite");
            return Err(MtpStatus::InvalidArgument);
        }
        *out = Box::into_raw(Box::new(MtpShift(PointShift::Additive(delta))));
        Ok(())
    })
}

/// # Safety
/// `shift` must come from a `mtp_shift_*_new` call and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mtp_shift_free(shift: *mut MtpShift) {
    if !shift.is_null() {
        drop(Box::from_raw(shift));
    }
}

/// Applies the shift to one exposure value.
///
/// # Safety
/// `shift` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtp_shift_apply(shift: *const MtpShift, a: f64, out: *mut f64) -> MtpStatus {
    guard(|| {
        non_null(shift, "shift")?;
        non_null(out, "out")?;
        *out = lib((*shift).0.apply(a))?;
        Ok(())
    })
}

/// Applies the shift to `n` values. `out` is untouched on error.
///
/// # Safety
/// `a` and `out` must each hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mtp_shift_apply_array(shift: *const MtpShift, a: *const f64, n: usize, out: *mut f64) -> MtpStatus {
    guard(|| {
        non_null(shift, "shift")?;
        let a = slice(a, n, "a")?;
        let shifted = lib((*shift).0.apply_all(a))?;
        slice_mut(out, n, "out")?.copy_from_slice(&shifted);
        Ok(())
    })
}

/// Delay policy over `horizon` steps postponing the first enactment by
/// `delay_steps`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtp_delay_policy_new(horizon: usize, delay_steps: usize, out: *mut *mut MtpDelayPolicy) -> MtpStatus {
    guard(|| {
        non_null(out, "out")?;
        let p = lib(LongitudinalDelayPolicy::new(horizon, delay_steps))?;
        *out = Box::into_raw(Box::new(MtpDelayPolicy(p)));
        Ok(())
    })
}

/// # Safety
/// `policy` must come from [`mtp_delay_policy_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mtp_delay_policy_free(policy: *mut MtpDelayPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Applies the delay to a monotone 0/1 trajectory of length `n`.
///
/// # Safety
/// `a` and `out` must each hold `n` bytes.
#[no_mangle]
pub unsafe extern "C" fn mtp_apply_delay(policy: *const MtpDelayPolicy, a: *const u8, n: usize, out: *mut u8) -> MtpStatus {
    guard(|| {
        non_null(policy, "policy")?;
        let a = slice(a, n, "a")?;
        let d = lib((*policy).0.apply_delay(a))?;
        slice_mut(out, n, "out")?.copy_from_slice(&d);
        Ok(())
    })
}

/// Wald interval `estimate -/+ z * se`.
///
/// # Safety
/// `lo` and `hi` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mtp_confidence_interval(estimate: f64, se: f64, alpha: f64, lo: *mut f64, hi: *mut f64) -> MtpStatus {
    guard(|| {
        non_null(lo, "lo")?;
        non_null(hi, "hi")?;
        let (l, h) = lib(inference::confidence_interval(estimate, se, alpha))?;
        *lo = l;
        *hi = h;
        Ok(())
    })
}

/// Cluster-robust standard error of `estimate` from `n` influence-curve
/// values and their cluster ids.
///
/// # Safety
/// `ic` and `clusters` must each hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mtp_cluster_robust_se(
    ic: *const f64,
    clusters: *const u64,
    n: usize,
    estimate: f64,
    alpha: f64,
    out: *mut MtpInterval,
) -> MtpStatus {
    guard(|| {
        non_null(out, "out")?;
        let ic = slice(ic, n, "ic")?;
        let clusters = slice(clusters, n, "clusters")?;
        let v = lib(inference::cluster_robust_se(ic, clusters, estimate, alpha))?;
        *out = MtpInterval { estimate: v.estimate, se: v.se, ci_low: v.ci_low, ci_high: v.ci_high, n_clusters: v.n_clusters };
        Ok(())
    })
}

/// Events per 100,000 people aged 12 and over.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mtp_compute_rate(event_count: u64, population_12plus: u64, out: *mut f64) -> MtpStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lib(compute_rate(event_count, population_12plus))?;
        Ok(())
    })
}

/// Runs the `[estimate]` section of a TOML run config and returns the
/// results document as JSON. Relative paths resolve against the working
/// directory.
///
/// # Safety
/// `config_toml` must be a nul-terminated string and `out_json` a valid
/// pointer. The returned string is freed with [`mtp_string_free`].
#[no_mangle]
pub unsafe extern "C" fn mtp_estimate_json(config_toml: *const c_char, out_json: *mut *mut c_char) -> MtpStatus {
    guard(|| {
        non_null(config_toml, "config_toml")?;
        non_null(out_json, "out_json")?;
        let text = CStr::from_ptr(config_toml).to_str().map_err(|_| {
            set_error("config is not valid UTF-8");
            MtpStatus::InvalidArgument
        })?;
        let mut cfg = lib(RunConfig::from_toml(text))?;
        cfg.apply_seed(cfg.seed);
        let Some(est) = cfg.estimate.as_ref() else {
            set_error("config has no [estimate] section");
            return Err(MtpStatus::InvalidArgument);
        };
        let result = lib(mtpshift::cli::run_estimate(est))?;
        let json = serde_json::to_string(&result).map_err(|e| {
            set_error(e.to_string());
            MtpStatus::Internal
        })?;
        *out_json = CString::new(json).expect("json has no nul").into_raw();
        Ok(())
    })
}
