//! C ABI for the forecast-verification core: opaque distribution handles,
//! scoring rules, and calibration measures, all returning status codes.
//!
//! Conventions:
//! - Every fallible function returns a [`TcStatus`]; results come back
//!   through `out` pointers that are written only on `TC_STATUS_OK`.
//! - Handles created by `tc_dist_*` constructors must be released with
//!   `tc_dist_free`.
//! - `tc_last_error_message` returns a thread-local, NUL-terminated
//!   description of the most recent failure (valid until the next failing
//!   call on the same thread).

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::ptr;
use std::slice;

use rand::rngs::StdRng;
use rand::SeedableRng;

use tailcal::calib::{step_divergence, DivergenceKind, PitSet};
use tailcal::dist::{Distribution, EnsembleForecast, TruncatedNormal};
use tailcal::scores::{
    censored_likelihood_score, crps_closed_tn, crps_sample, fair_crps, fair_twcrps, log_score,
    twcrps_closed_tn, twcrps_sample, WeightSpec,
};

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    });
}

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Unsupported = 3,
    NumericalError = 4,
}

/// Divergence selector for the calibration measures.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TcDivergence {
    W1 = 0,
    W1OrderStat = 1,
    Cramer = 2,
    Ks = 3,
}

impl From<TcDivergence> for DivergenceKind {
    fn from(d: TcDivergence) -> Self {
        match d {
            TcDivergence::W1 => DivergenceKind::W1,
            TcDivergence::W1OrderStat => DivergenceKind::W1OrderStat,
            TcDivergence::Cramer => DivergenceKind::Cramer,
            TcDivergence::Ks => DivergenceKind::Ks,
        }
    }
}

/// Opaque forecast-distribution handle.
pub struct TcDistribution {
    inner: Distribution,
}

/// NUL-terminated library version string; statically allocated.
#[no_mangle]
pub extern "C" fn tc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread.
#[no_mangle]
pub extern "C" fn tc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn write_out<T>(out: *mut T, value: T) -> TcStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return TcStatus::NullPointer;
    }
    unsafe { ptr::write(out, value) };
    TcStatus::Ok
}

unsafe fn slice_arg<'a>(ptr: *const f64, len: usize) -> Option<&'a [f64]> {
    if ptr.is_null() {
        set_error("array pointer is null");
        return None;
    }
    Some(unsafe { slice::from_raw_parts(ptr, len) })
}

fn boxed(d: Distribution) -> *mut TcDistribution {
    Box::into_raw(Box::new(TcDistribution { inner: d }))
}

/// Normal distribution left-truncated at `lower`; pass -INFINITY for no
/// truncation.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_trunc_normal(
    mu: f64,
    sigma: f64,
    lower: f64,
    out: *mut *mut TcDistribution,
) -> TcStatus {
    match TruncatedNormal::new(mu, sigma, lower) {
        Ok(d) => unsafe { write_out(out, boxed(Distribution::TruncNormal(d))) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Empirical (ensemble) distribution from `len` member values.
///
/// # Safety
/// `members` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_ensemble(
    members: *const f64,
    len: usize,
    out: *mut *mut TcDistribution,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(members, len) }) else {
        return TcStatus::NullPointer;
    };
    match EnsembleForecast::new(values.to_vec()) {
        Ok(e) => unsafe { write_out(out, boxed(Distribution::Ensemble(e))) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Release a distribution handle. Passing NULL is a no-op.
///
/// # Safety
/// `handle` must have come from a `tc_dist_*` constructor and must not be
/// used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_free(handle: *mut TcDistribution) {
    if !handle.is_null() {
        drop(unsafe { Box::from_raw(handle) });
    }
}

macro_rules! with_handle {
    ($handle:expr) => {
        match unsafe { $handle.as_ref() } {
            Some(h) => &h.inner,
            None => {
                set_error("distribution handle is null");
                return TcStatus::NullPointer;
            }
        }
    };
}

/// Cumulative distribution function at `x`.
///
/// # Safety
/// `handle` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_cdf(
    handle: *const TcDistribution,
    x: f64,
    out: *mut f64,
) -> TcStatus {
    let d = with_handle!(handle);
    unsafe { write_out(out, d.cdf(x)) }
}

/// Probability density at `x`; fails with `UNSUPPORTED` for ensembles.
///
/// # Safety
/// As for `tc_dist_cdf`.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_pdf(
    handle: *const TcDistribution,
    x: f64,
    out: *mut f64,
) -> TcStatus {
    let d = with_handle!(handle);
    match d.pdf(x) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::Unsupported
        }
    }
}

/// Quantile at probability `p` in (0, 1).
///
/// # Safety
/// As for `tc_dist_cdf`.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_quantile(
    handle: *const TcDistribution,
    p: f64,
    out: *mut f64,
) -> TcStatus {
    let d = with_handle!(handle);
    match d.quantile(p) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Draw `len` values into `out` using a deterministic generator seeded by
/// `seed`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tc_dist_sample(
    handle: *const TcDistribution,
    seed: u64,
    out: *mut f64,
    len: usize,
) -> TcStatus {
    let d = with_handle!(handle);
    if out.is_null() {
        set_error("out pointer is null");
        return TcStatus::NullPointer;
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let values = d.sample(&mut rng, len);
    unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, len) };
    TcStatus::Ok
}

/// Closed-form CRPS of a truncated normal (lower = -INFINITY for a plain
/// normal).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_crps_trunc_normal(
    mu: f64,
    sigma: f64,
    lower: f64,
    y: f64,
    out: *mut f64,
) -> TcStatus {
    match TruncatedNormal::new(mu, sigma, lower) {
        Ok(d) => unsafe { write_out(out, crps_closed_tn(&d, y)) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Closed-form threshold-weighted CRPS of a truncated normal with
/// indicator weight above `threshold`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_twcrps_trunc_normal(
    mu: f64,
    sigma: f64,
    lower: f64,
    y: f64,
    threshold: f64,
    out: *mut f64,
) -> TcStatus {
    match TruncatedNormal::new(mu, sigma, lower) {
        Ok(d) => unsafe { write_out(out, twcrps_closed_tn(&d, y, &WeightSpec::new(threshold))) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Negative log density of a distribution handle at `y`.
///
/// # Safety
/// As for `tc_dist_cdf`.
#[no_mangle]
pub unsafe extern "C" fn tc_log_score(
    handle: *const TcDistribution,
    y: f64,
    out: *mut f64,
) -> TcStatus {
    let d = with_handle!(handle);
    match log_score(d, y) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::Unsupported
        }
    }
}

/// Censored likelihood score at `threshold`.
///
/// # Safety
/// As for `tc_dist_cdf`.
#[no_mangle]
pub unsafe extern "C" fn tc_censored_likelihood_score(
    handle: *const TcDistribution,
    y: f64,
    threshold: f64,
    out: *mut f64,
) -> TcStatus {
    let d = with_handle!(handle);
    match censored_likelihood_score(d, y, &WeightSpec::new(threshold)) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::Unsupported
        }
    }
}

/// Sample CRPS of an ensemble given by `members`.
///
/// # Safety
/// `members` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_crps_sample(
    members: *const f64,
    len: usize,
    y: f64,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(members, len) }) else {
        return TcStatus::NullPointer;
    };
    match EnsembleForecast::new(values.to_vec()) {
        Ok(e) => unsafe { write_out(out, crps_sample(&e, y)) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Threshold-weighted sample CRPS.
///
/// # Safety
/// As for `tc_crps_sample`.
#[no_mangle]
pub unsafe extern "C" fn tc_twcrps_sample(
    members: *const f64,
    len: usize,
    y: f64,
    threshold: f64,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(members, len) }) else {
        return TcStatus::NullPointer;
    };
    match EnsembleForecast::new(values.to_vec()) {
        Ok(e) => unsafe { write_out(out, twcrps_sample(&e, y, &WeightSpec::new(threshold))) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Fair (unbiased) CRPS; requires at least two members.
///
/// # Safety
/// As for `tc_crps_sample`.
#[no_mangle]
pub unsafe extern "C" fn tc_fair_crps(
    members: *const f64,
    len: usize,
    y: f64,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(members, len) }) else {
        return TcStatus::NullPointer;
    };
    let ensemble = match EnsembleForecast::new(values.to_vec()) {
        Ok(e) => e,
        Err(e) => {
            set_error(&e.to_string());
            return TcStatus::InvalidArgument;
        }
    };
    match fair_crps(&ensemble, y) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Fair threshold-weighted CRPS; requires at least two members.
///
/// # Safety
/// As for `tc_crps_sample`.
#[no_mangle]
pub unsafe extern "C" fn tc_fair_twcrps(
    members: *const f64,
    len: usize,
    y: f64,
    threshold: f64,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(members, len) }) else {
        return TcStatus::NullPointer;
    };
    let ensemble = match EnsembleForecast::new(values.to_vec()) {
        Ok(e) => e,
        Err(e) => {
            set_error(&e.to_string());
            return TcStatus::InvalidArgument;
        }
    };
    match fair_twcrps(&ensemble, y, &WeightSpec::new(threshold)) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::InvalidArgument
        }
    }
}

/// Miscalibration of PIT values in [0, 1] under the chosen divergence.
///
/// # Safety
/// `pits` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_mcb(
    pits: *const f64,
    len: usize,
    divergence: TcDivergence,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(pits, len) }) else {
        return TcStatus::NullPointer;
    };
    let set = match PitSet::unconditional(values.to_vec()) {
        Ok(s) => s,
        Err(e) => {
            set_error(&e.to_string());
            return TcStatus::InvalidArgument;
        }
    };
    match tailcal::calib::mcb(&set, divergence.into()) {
        Ok(v) => unsafe { write_out(out, v) },
        Err(e) => {
            set_error(&e.to_string());
            TcStatus::NumericalError
        }
    }
}

/// Tail miscalibration from `len` conditional-PIT values of the exceeding
/// cases plus the summed forecast exceedance probability over all cases.
///
/// # Safety
/// `cpits` must point to `len` readable doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tc_tmcb(
    cpits: *const f64,
    len: usize,
    exceedance_prob_sum: f64,
    divergence: TcDivergence,
    out: *mut f64,
) -> TcStatus {
    let Some(values) = (unsafe { slice_arg(cpits, len) }) else {
        return TcStatus::NullPointer;
    };
    if !(exceedance_prob_sum > 0.0) {
        set_error("summed exceedance probability must be positive");
        return TcStatus::InvalidArgument;
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        set_error("conditional PIT values must lie in [0, 1]");
        return TcStatus::InvalidArgument;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = sorted.len() as f64 / exceedance_prob_sum;
    unsafe { write_out(out, step_divergence(&sorted, scale, divergence.into())) }
}
