//! C ABI surface over the state-plane service core.
//!
//! The plane is an opaque handle; every call takes and returns UTF-8 JSON so
//! the binding stays stable while the Rust types evolve. All functions are
//! panic-safe: failures set a thread-local error string retrievable via
//! `sp_last_error` and report a status code.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stateplane::governance::{PolicyRule, PolicySet, Principal};
use stateplane::model::StatePlaneConfig;
use stateplane::service::{
    CommitOutcomeRequest, PrepareContextRequest, ServiceError, StatePlane,
};

/// Opaque handle to one state plane instance. Not thread-safe; callers must
/// serialize access per handle.
pub struct SpPlane {
    inner: StatePlane,
}

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    SpOk = 0,
    SpInvalidArgument = 1,
    SpPolicyDenied = 2,
    SpGateRejected = 3,
    SpNotFound = 4,
    SpBudgetExhausted = 5,
    SpAuditFailure = 6,
    SpStorageFailure = 7,
    SpInternal = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let cstring = CString::new(msg.into().replace('\0', " "))
        .unwrap_or_else(|_| CString::new("error").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(cstring));
}

fn status_of(err: &ServiceError) -> SpStatus {
    match err {
        ServiceError::PolicyDenied { .. } => SpStatus::SpPolicyDenied,
        ServiceError::GateRejected { .. } => SpStatus::SpGateRejected,
        ServiceError::BudgetExhausted { .. } => SpStatus::SpBudgetExhausted,
        ServiceError::InvalidRequest(_) | ServiceError::NonUserScope(_) => {
            SpStatus::SpInvalidArgument
        }
        ServiceError::NotFound(_) => SpStatus::SpNotFound,
        ServiceError::Audit(_) => SpStatus::SpAuditFailure,
        ServiceError::Store(_) => SpStatus::SpStorageFailure,
        ServiceError::Promote(_) => SpStatus::SpInvalidArgument,
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated C string.
unsafe fn arg_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, SpStatus> {
    if ptr.is_null() {
        set_error(format!("{name} is null"));
        return Err(SpStatus::SpInvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{name} is not valid utf-8"));
        SpStatus::SpInvalidArgument
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, name: &str) -> Result<T, SpStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(format!("{name}: {e}"));
        SpStatus::SpInvalidArgument
    })
}

fn write_out(out: *mut *mut c_char, value: &impl serde::Serialize) -> SpStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return SpStatus::SpInvalidArgument;
    }
    let json = match serde_json::to_string(value) {
        Ok(j) => j,
        Err(e) => {
            set_error(format!("serialize: {e}"));
            return SpStatus::SpInternal;
        }
    };
    match CString::new(json) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SpStatus::SpOk
        }
        Err(e) => {
            set_error(format!("serialize: {e}"));
            SpStatus::SpInternal
        }
    }
}

fn guarded(f: impl FnOnce() -> SpStatus) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SpStatus::SpInternal
        }
    }
}

fn build_plane(
    dir_json: Option<&str>,
    config_json: &str,
    policy_json: &str,
) -> Result<StatePlane, SpStatus> {
    let cfg: StatePlaneConfig = parse_json(config_json, "config_json")?;
    let rules: Vec<PolicyRule> = parse_json(policy_json, "policy_json")?;
    let policy = PolicySet::new(rules);
    match dir_json {
        None => Ok(StatePlane::new(cfg, policy)),
        Some(dir) => StatePlane::open(Path::new(dir), cfg, policy).map_err(|e| {
            set_error(e.to_string());
            status_of(&e)
        }),
    }
}

/// Creates an in-memory plane. Returns null on error (see `sp_last_error`).
///
/// # Safety
/// `config_json` and `policy_json` must be valid NUL-terminated C strings.
#[no_mangle]
pub unsafe extern "C" fn sp_plane_new(
    config_json: *const c_char,
    policy_json: *const c_char,
) -> *mut SpPlane {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let config = arg_str(config_json, "config_json").ok()?;
        let policy = arg_str(policy_json, "policy_json").ok()?;
        build_plane(None, config, policy).ok()
    }));
    match result {
        Ok(Some(plane)) => Box::into_raw(Box::new(SpPlane { inner: plane })),
        Ok(None) => ptr::null_mut(),
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// Opens (or creates) a persistent plane rooted at `store_dir`. Returns null
/// on error.
///
/// # Safety
/// All arguments must be valid NUL-terminated C strings.
#[no_mangle]
pub unsafe extern "C" fn sp_plane_open(
    store_dir: *const c_char,
    config_json: *const c_char,
    policy_json: *const c_char,
) -> *mut SpPlane {
    let result = catch_unwind(AssertUnwindSafe(|| {
        let dir = arg_str(store_dir, "store_dir").ok()?;
        let config = arg_str(config_json, "config_json").ok()?;
        let policy = arg_str(policy_json, "policy_json").ok()?;
        build_plane(Some(dir), config, policy).ok()
    }));
    match result {
        Ok(Some(plane)) => Box::into_raw(Box::new(SpPlane { inner: plane })),
        Ok(None) => ptr::null_mut(),
        Err(_) => {
            set_error("internal panic");
            ptr::null_mut()
        }
    }
}

/// Releases a plane handle. Null is a no-op.
///
/// # Safety
/// `plane` must be null or a pointer returned by `sp_plane_new`/`sp_plane_open`
/// that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sp_plane_free(plane: *mut SpPlane) {
    if !plane.is_null() {
        drop(Box::from_raw(plane));
    }
}

/// Frees a string returned through an output parameter. Null is a no-op.
///
/// # Safety
/// `s` must be null or a string produced by this library.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Returns the thread-local message for the last failure, or null.
/// The pointer is valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

unsafe fn with_plane<'a>(plane: *mut SpPlane) -> Result<&'a mut SpPlane, SpStatus> {
    plane.as_mut().ok_or_else(|| {
        set_error("plane handle is null");
        SpStatus::SpInvalidArgument
    })
}

fn service_call<T: serde::Serialize>(
    out: *mut *mut c_char,
    result: Result<T, ServiceError>,
) -> SpStatus {
    match result {
        Ok(value) => write_out(out, &value),
        Err(e) => {
            set_error(e.to_string());
            status_of(&e)
        }
    }
}

/// Retrieves and assembles a bounded, policy-filtered context. On success
/// writes a JSON response to `*out` (free with `sp_string_free`).
///
/// # Safety
/// `plane` must be a live handle; string arguments must be valid
/// NUL-terminated C strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_prepare_context(
    plane: *mut SpPlane,
    principal_json: *const c_char,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let principal: Principal = match arg_str(principal_json, "principal_json")
            .and_then(|s| parse_json(s, "principal_json"))
        {
            Ok(p) => p,
            Err(s) => return s,
        };
        let request: PrepareContextRequest = match arg_str(request_json, "request_json")
            .and_then(|s| parse_json(s, "request_json"))
        {
            Ok(r) => r,
            Err(s) => return s,
        };
        service_call(out, plane.inner.prepare_context(&principal, &request))
    })
}

/// Records an interaction outcome, running segmentation, salience scoring,
/// and the write gate. On success writes a JSON response to `*out`.
///
/// # Safety
/// Same contract as `sp_prepare_context`.
#[no_mangle]
pub unsafe extern "C" fn sp_commit_outcome(
    plane: *mut SpPlane,
    principal_json: *const c_char,
    request_json: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let principal: Principal = match arg_str(principal_json, "principal_json")
            .and_then(|s| parse_json(s, "principal_json"))
        {
            Ok(p) => p,
            Err(s) => return s,
        };
        let request: CommitOutcomeRequest = match arg_str(request_json, "request_json")
            .and_then(|s| parse_json(s, "request_json"))
        {
            Ok(r) => r,
            Err(s) => return s,
        };
        service_call(out, plane.inner.commit_outcome(&principal, &request))
    })
}

/// Applies exponential decay and prunes objects below the strength floor.
///
/// # Safety
/// Same contract as `sp_prepare_context`.
#[no_mangle]
pub unsafe extern "C" fn sp_decay_sweep(
    plane: *mut SpPlane,
    principal_json: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let principal: Principal = match arg_str(principal_json, "principal_json")
            .and_then(|s| parse_json(s, "principal_json"))
        {
            Ok(p) => p,
            Err(s) => return s,
        };
        service_call(out, plane.inner.decay_sweep(&principal))
    })
}

/// Physically erases every object under a user-family scope.
///
/// # Safety
/// Same contract as `sp_prepare_context`.
#[no_mangle]
pub unsafe extern "C" fn sp_forget_scope(
    plane: *mut SpPlane,
    principal_json: *const c_char,
    scope: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let principal: Principal = match arg_str(principal_json, "principal_json")
            .and_then(|s| parse_json(s, "principal_json"))
        {
            Ok(p) => p,
            Err(s) => return s,
        };
        let scope = match arg_str(scope, "scope") {
            Ok(s) => s,
            Err(s) => return s,
        };
        service_call(out, plane.inner.forget_scope(&principal, scope))
    })
}

/// Fetches one state object by id under read policy.
///
/// # Safety
/// Same contract as `sp_prepare_context`.
#[no_mangle]
pub unsafe extern "C" fn sp_get_state(
    plane: *mut SpPlane,
    principal_json: *const c_char,
    id: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let principal: Principal = match arg_str(principal_json, "principal_json")
            .and_then(|s| parse_json(s, "principal_json"))
        {
            Ok(p) => p,
            Err(s) => return s,
        };
        let id = match arg_str(id, "id") {
            Ok(s) => s,
            Err(s) => return s,
        };
        service_call(out, plane.inner.get_state(&principal, id))
    })
}

/// Verifies the audit hash chain; writes the verification report to `*out`.
///
/// # Safety
/// `plane` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_verify_audit(plane: *mut SpPlane, out: *mut *mut c_char) -> SpStatus {
    guarded(|| {
        let plane = match with_plane(plane) {
            Ok(p) => p,
            Err(s) => return s,
        };
        write_out(out, &plane.inner.verify_audit())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn c(s: &str) -> CString {
        CString::new(s).unwrap()
    }

    fn policy_json() -> CString {
        c(r#"[{"rule_id":"r1","effect":"allow","roles":[],"actions":["read","write","promote","delete"],"scope_prefix":"user"},
             {"rule_id":"r2","effect":"allow","roles":[],"actions":["read","write"],"scope_prefix":"session"}]"#)
    }

    fn new_plane() -> *mut SpPlane {
        let cfg = c(serde_json::to_string(&StatePlaneConfig::default()).unwrap().as_str());
        let plane = unsafe { sp_plane_new(cfg.as_ptr(), policy_json().as_ptr()) };
        assert!(!plane.is_null());
        plane
    }

    #[test]
    fn round_trip_commit_and_prepare() {
        let plane = new_plane();
        let principal = c(r#"{"tenant_id":"acme","user_id":"u1","roles":["analyst"],"session_id":"s1"}"#);
        let commit = c(r#"{"session_id":"s1","scope":"user/u1/prefs","goal":"capture preference",
            "turns":[{"role":"user","text":"always format reports as tables, please.","structural_markers":["decision"]}],
            "outcome":{"kind":"success","detail":""}}"#);
        let mut out: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            sp_commit_outcome(plane, principal.as_ptr(), commit.as_ptr(), &mut out)
        };
        assert_eq!(status, SpStatus::SpOk);
        let body = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        assert!(body.contains("\"boundary\""));
        unsafe { sp_string_free(out) };

        let prepare = c(r#"{"session_id":"s1","scope":"user/u1/prefs","user_message":"how should reports be formatted?"}"#);
        let mut out2: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            sp_prepare_context(plane, principal.as_ptr(), prepare.as_ptr(), &mut out2)
        };
        assert_eq!(status, SpStatus::SpOk);
        let body: serde_json::Value =
            serde_json::from_str(unsafe { CStr::from_ptr(out2) }.to_str().unwrap()).unwrap();
        assert!(body["token_count"].as_u64().unwrap() <= body["budget"].as_u64().unwrap());
        unsafe { sp_string_free(out2) };
        unsafe { sp_plane_free(plane) };
    }

    #[test]
    fn denied_scope_maps_to_policy_status() {
        let plane = new_plane();
        let principal = c(r#"{"tenant_id":"acme","user_id":"u1","roles":["analyst"],"session_id":"s1"}"#);
        let prepare = c(r#"{"session_id":"s1","scope":"tenant/org/acme","user_message":"anything"}"#);
        let mut out: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            sp_prepare_context(plane, principal.as_ptr(), prepare.as_ptr(), &mut out)
        };
        assert_eq!(status, SpStatus::SpPolicyDenied);
        assert!(!sp_last_error().is_null());
        unsafe { sp_plane_free(plane) };
    }

    #[test]
    fn invalid_json_is_rejected() {
        let plane = new_plane();
        let principal = c("not json");
        let request = c("{}");
        let mut out: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            sp_prepare_context(plane, principal.as_ptr(), request.as_ptr(), &mut out)
        };
        assert_eq!(status, SpStatus::SpInvalidArgument);
        unsafe { sp_plane_free(plane) };
    }

    #[test]
    fn null_handle_is_an_argument_error() {
        let principal = c("{}");
        let request = c("{}");
        let mut out: *mut c_char = std::ptr::null_mut();
        let status = unsafe {
            sp_prepare_context(std::ptr::null_mut(), principal.as_ptr(), request.as_ptr(), &mut out)
        };
        assert_eq!(status, SpStatus::SpInvalidArgument);
    }
}
