//! C ABI over a seeded elicitation session.
//!
//! Sessions are opaque heap handles. Every entry point returns a [`PeStatus`];
//! on failure a description is available from [`pe_last_error_message`] on the
//! same thread until the next call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use prefelicit::model::Response;
use prefelicit::normal;
use prefelicit::session::{Session, SessionConfig, Status};
use prefelicit::Error;

/// Opaque session handle.
pub struct PeSession {
    inner: Session,
}

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeStatus {
    Ok = 0,
    /// Null pointer, wrong buffer length, malformed JSON or invalid configuration.
    InvalidArgument = 1,
    /// The session cannot perform the request in its current state.
    InvalidState = 2,
    /// Numerical or other internal failure.
    Internal = 3,
    /// A panic was caught at the boundary; the handle should be freed.
    Panic = 4,
}

/// Lifecycle state of a session.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeSessionStatus {
    AwaitingResponse = 0,
    Converged = 1,
    MaxStepsReached = 2,
}

impl From<Status> for PeSessionStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::AwaitingResponse => Self::AwaitingResponse,
            Status::Converged => Self::Converged,
            Status::MaxStepsReached => Self::MaxStepsReached,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(code: PeStatus, msg: impl Into<String>) -> PeStatus {
    set_error(msg);
    code
}

fn from_error(e: Error) -> PeStatus {
    let code = match e {
        Error::Domain(_) | Error::DimensionMismatch { .. } | Error::InvalidConfig(_) | Error::Json(_) => {
            PeStatus::InvalidArgument
        }
        Error::InvalidState(_) => PeStatus::InvalidState,
        _ => PeStatus::Internal,
    };
    fail(code, e.to_string())
}

fn guard(f: impl FnOnce() -> PeStatus) -> PeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        fail(PeStatus::Panic, format!("panic: {msg}"))
    })
}

unsafe fn session<'a>(s: *const PeSession) -> Option<&'a PeSession> {
    s.as_ref()
}

unsafe fn session_mut<'a>(s: *mut PeSession) -> Option<&'a mut PeSession> {
    s.as_mut()
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, dims: usize) -> Result<&'a mut [f64], PeStatus> {
    if p.is_null() {
        return Err(fail(PeStatus::InvalidArgument, "output buffer is null"));
    }
    if len != dims {
        return Err(fail(PeStatus::InvalidArgument, format!("buffer length {len} does not match dims {dims}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn create(config: SessionConfig, seed: u64, out: *mut *mut PeSession) -> PeStatus {
    if out.is_null() {
        return fail(PeStatus::InvalidArgument, "out is null");
    }
    match Session::new(config, seed) {
        Ok(inner) => {
            unsafe { *out = Box::into_raw(Box::new(PeSession { inner })) };
            PeStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Create a session with default settings and `dims` parameters.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_session_new(dims: usize, seed: u64, out: *mut *mut PeSession) -> PeStatus {
    guard(|| create(SessionConfig { dims, ..SessionConfig::default() }, seed, out))
}

/// Create a session from a JSON configuration; absent fields take defaults.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_session_new_with_config(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut PeSession,
) -> PeStatus {
    guard(|| {
        if config_json.is_null() {
            return fail(PeStatus::InvalidArgument, "config_json is null");
        }
        let text = match CStr::from_ptr(config_json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(PeStatus::InvalidArgument, "config_json is not UTF-8"),
        };
        match serde_json::from_str::<SessionConfig>(text) {
            Ok(cfg) => create(cfg, seed, out),
            Err(e) => fail(PeStatus::InvalidArgument, format!("config_json: {e}")),
        }
    })
}

/// Release a session. Null is ignored.
///
/// # Safety
/// `s` must come from a constructor of this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pe_session_free(s: *mut PeSession) {
    if !s.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(s))));
    }
}

/// Number of preference parameters `D`.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn pe_session_dims(s: *const PeSession, out: *mut usize) -> PeStatus {
    guard(|| match (session(s), out.as_mut()) {
        (Some(s), Some(out)) => {
            *out = s.inner.config.dims;
            PeStatus::Ok
        }
        _ => fail(PeStatus::InvalidArgument, "null argument"),
    })
}

/// The pending trial mapped to the original `[0, 1]^D` domain.
///
/// # Safety
/// `x_ref` and `x_alt` must each hold `len` doubles, with `len` equal to the session's dims.
#[no_mangle]
pub unsafe extern "C" fn pe_session_current_trial(
    s: *const PeSession,
    x_ref: *mut f64,
    x_alt: *mut f64,
    len: usize,
) -> PeStatus {
    guard(|| {
        let Some(s) = session(s) else {
            return fail(PeStatus::InvalidArgument, "session is null");
        };
        let Some(trial) = s.inner.state.current_trial.as_ref() else {
            return fail(PeStatus::InvalidState, "session has finished");
        };
        let d = s.inner.config.dims;
        let (r, a) = match (out_slice(x_ref, len, d), out_slice(x_alt, len, d)) {
            (Ok(r), Ok(a)) => (r, a),
            (Err(code), _) | (_, Err(code)) => return code,
        };
        for (o, v) in r.iter_mut().zip(&trial.x_ref) {
            *o = normal::cdf(*v);
        }
        for (o, v) in a.iter_mut().zip(&trial.x_alt) {
            *o = normal::cdf(*v);
        }
        PeStatus::Ok
    })
}

/// Answer the pending trial: `1` prefers the alternative, `0` the reference.
///
/// # Safety
/// `s` must be a live handle not used concurrently.
#[no_mangle]
pub unsafe extern "C" fn pe_session_submit(s: *mut PeSession, r: u8) -> PeStatus {
    guard(|| {
        let Some(s) = session_mut(s) else {
            return fail(PeStatus::InvalidArgument, "session is null");
        };
        let r = match Response::from_bit(r) {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        match s.inner.submit(r) {
            Ok(()) => PeStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}

/// Point estimate of the optimum and the sensitivities. Requires one answered trial.
///
/// # Safety
/// `theta` must hold `len` doubles; `lambda` may be null, otherwise it must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn pe_session_estimate(
    s: *const PeSession,
    theta: *mut f64,
    lambda: *mut f64,
    len: usize,
) -> PeStatus {
    guard(|| {
        let Some(s) = session(s) else {
            return fail(PeStatus::InvalidArgument, "session is null");
        };
        let d = s.inner.config.dims;
        let est = match s.inner.state.estimate() {
            Ok(e) => e,
            Err(e) => return from_error(e),
        };
        match out_slice(theta, len, d) {
            Ok(t) => t.copy_from_slice(&est.theta),
            Err(code) => return code,
        }
        if !lambda.is_null() {
            match out_slice(lambda, len, d) {
                Ok(l) => l.copy_from_slice(&est.lambda),
                Err(code) => return code,
            }
        }
        PeStatus::Ok
    })
}

/// Remaining system uncertainty; `InvalidState` before the first designed trial.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn pe_session_rsu(s: *const PeSession, out: *mut f64) -> PeStatus {
    guard(|| match (session(s), out.as_mut()) {
        (Some(s), Some(out)) => match s.inner.state.rsu() {
            Ok(v) => {
                *out = v;
                PeStatus::Ok
            }
            Err(e) => from_error(e),
        },
        _ => fail(PeStatus::InvalidArgument, "null argument"),
    })
}

/// # Safety
/// `s` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn pe_session_status(s: *const PeSession, out: *mut PeSessionStatus) -> PeStatus {
    guard(|| match (session(s), out.as_mut()) {
        (Some(s), Some(out)) => {
            *out = s.inner.state.status.into();
            PeStatus::Ok
        }
        _ => fail(PeStatus::InvalidArgument, "null argument"),
    })
}

/// Index of the pending trial (1-based), or the number of answered trials once finished.
///
/// # Safety
/// `s` must be a live handle and `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn pe_session_step(s: *const PeSession, out: *mut usize) -> PeStatus {
    guard(|| match (session(s), out.as_mut()) {
        (Some(s), Some(out)) => {
            *out = s.inner.state.step();
            PeStatus::Ok
        }
        _ => fail(PeStatus::InvalidArgument, "null argument"),
    })
}

/// Full session (seed, configuration and state) as JSON. Free with [`pe_string_free`].
///
/// # Safety
/// `s` must be a live handle and `out` valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn pe_session_to_json(s: *const PeSession, out: *mut *mut c_char) -> PeStatus {
    guard(|| {
        let (Some(s), false) = (session(s), out.is_null()) else {
            return fail(PeStatus::InvalidArgument, "null argument");
        };
        match serde_json::to_string(&s.inner) {
            Ok(text) => match CString::new(text) {
                Ok(c) => {
                    *out = c.into_raw();
                    PeStatus::Ok
                }
                Err(e) => fail(PeStatus::Internal, e.to_string()),
            },
            Err(e) => fail(PeStatus::Internal, e.to_string()),
        }
    })
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pe_string_free(p: *mut c_char) {
    if !p.is_null() {
        drop(CString::from_raw(p));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pe_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
