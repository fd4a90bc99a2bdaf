//! C interface to `persuasion-core`.
//!
//! A mechanism is built from an instance config (the same JSON the command
//! line reads) and handed out as an opaque pointer. Every function returns a
//! [`PersuasionStatus`]; on failure the message is available from
//! [`persuasion_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, size_t};
use persuasion_core::config::InstanceConfig;
use persuasion_core::revenue::{revenue_direct, simulate};
use persuasion_core::{build_optimal_mechanism, Error, Signal, ThresholdMechanism};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PersuasionStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Assumption = 4,
    InvalidArgument = 5,
    /// Payment or posterior asked for at a type that is never asked to buy.
    Undefined = 6,
    Internal = 7,
    Panic = 8,
}

/// Opaque mechanism handle.
pub struct PersuasionMechanism {
    inner: ThresholdMechanism,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> PersuasionStatus {
    match e {
        Error::Config(_) | Error::Json(_) => PersuasionStatus::Config,
        Error::Assumption(_) => PersuasionStatus::Assumption,
        Error::Validation(_) => PersuasionStatus::InvalidArgument,
        Error::UndefinedPayment { .. } | Error::UndefinedPosterior { .. } => PersuasionStatus::Undefined,
        _ => PersuasionStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (PersuasionStatus, String)>) -> PersuasionStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PersuasionStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside persuasion-ffi");
            PersuasionStatus::Panic
        }
    }
}

fn fail(e: Error) -> (PersuasionStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PersuasionStatus, String) {
    (PersuasionStatus::NullPointer, format!("{what} is null"))
}

unsafe fn handle<'a>(m: *const PersuasionMechanism) -> Result<&'a ThresholdMechanism, (PersuasionStatus, String)> {
    m.as_ref().map(|h| &h.inner).ok_or_else(|| null("mechanism"))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), (PersuasionStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

/// Message of the last failed call on this thread. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn persuasion_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds the optimal mechanism for an instance config. `grid` overrides the
/// config's grid size unless it is 0.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn persuasion_mechanism_build(
    config_json: *const c_char,
    grid: size_t,
    out: *mut *mut PersuasionMechanism,
) -> PersuasionStatus {
    guard(|| {
        if config_json.is_null() {
            return Err(null("config_json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        out.write(ptr::null_mut());
        let text = CStr::from_ptr(config_json).to_str().map_err(|e| (PersuasionStatus::InvalidUtf8, e.to_string()))?;
        let cfg = InstanceConfig::from_json(text).map_err(fail)?;
        let inst = cfg.build((grid > 0).then_some(grid)).map_err(fail)?;
        let inner = build_optimal_mechanism(&inst).map_err(fail)?;
        out.write(Box::into_raw(Box::new(PersuasionMechanism { inner })));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`persuasion_mechanism_build`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn persuasion_mechanism_free(m: *mut PersuasionMechanism) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn persuasion_num_buyers(m: *const PersuasionMechanism, out: *mut size_t) -> PersuasionStatus {
    guard(|| write(out, handle(m)?.n(), "out"))
}

/// Buyer asked at type profile `types[0..n]` and quality `q`, or -1 when the
/// seller keeps the item.
///
/// # Safety
/// `types` must point to `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn persuasion_allocate(
    m: *const PersuasionMechanism,
    types: *const f64,
    n: size_t,
    q: f64,
    out: *mut i64,
) -> PersuasionStatus {
    guard(|| {
        let m = handle(m)?;
        if types.is_null() {
            return Err(null("types"));
        }
        if n != m.n() {
            return Err((PersuasionStatus::InvalidArgument, format!("expected {} types, got {n}", m.n())));
        }
        let t = std::slice::from_raw_parts(types, n);
        if t.iter().chain([&q]).any(|x| !x.is_finite()) {
            return Err((PersuasionStatus::InvalidArgument, "types and quality must be finite".into()));
        }
        let asked = match m.allocate(t, q) {
            Signal::NoSale => -1,
            Signal::AskBuyer(i) => i as i64,
        };
        write(out, asked, "out")
    })
}

/// Payment of `buyer` at type `t` when asked.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn persuasion_payment(
    m: *const PersuasionMechanism,
    buyer: size_t,
    t: f64,
    out: *mut f64,
) -> PersuasionStatus {
    guard(|| {
        let m = handle(m)?;
        if buyer >= m.n() || !t.is_finite() {
            return Err((PersuasionStatus::InvalidArgument, format!("no buyer {buyer} or bad type {t}")));
        }
        write(out, m.payment(buyer, t).map_err(fail)?, "out")
    })
}

/// Expected revenue by quadrature.
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn persuasion_revenue(m: *const PersuasionMechanism, out: *mut f64) -> PersuasionStatus {
    guard(|| write(out, revenue_direct(handle(m)?).map_err(fail)?, "out"))
}

/// Monte Carlo revenue: mean and standard error over `samples` draws.
///
/// # Safety
/// `m` must be a live handle; `mean` and `std_error` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn persuasion_simulate(
    m: *const PersuasionMechanism,
    samples: u64,
    seed: u64,
    mean: *mut f64,
    std_error: *mut f64,
) -> PersuasionStatus {
    guard(|| {
        let m = handle(m)?;
        if mean.is_null() || std_error.is_null() {
            return Err(null("mean or std_error"));
        }
        let r = simulate(m, samples as usize, seed).map_err(fail)?;
        write(mean, r.revenue_mean, "mean")?;
        write(std_error, r.revenue_stderr, "std_error")
    })
}

/// The mechanism as JSON. Release the string with [`persuasion_string_free`].
///
/// # Safety
/// `m` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn persuasion_to_json(m: *const PersuasionMechanism, out: *mut *mut c_char) -> PersuasionStatus {
    guard(|| {
        let json = handle(m)?.to_json().map_err(fail)?;
        let s = CString::new(json).map_err(|e| (PersuasionStatus::Internal, e.to_string()))?;
        write(out, s.into_raw(), "out")
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn persuasion_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
