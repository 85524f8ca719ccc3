//! C ABI over the shadowpipe engine.
//!
//! Handles are opaque pointers created by `sp_*_open`/`sp_dataset_*` and
//! released with the matching `_free`. Every call returns an [`SpStatus`];
//! on failure `sp_last_error` describes the cause for the calling thread.
//! Strings handed out are NUL-terminated UTF-8 owned by the caller and must
//! be released with `sp_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use shadowpipe::corpus::{generate_corpus, CorpusConfig, Dataset};
use shadowpipe::engine::LatencyConfig;
use shadowpipe::plan::PipelinePlan;
use shadowpipe::session::{Session, SessionError};
use shadowpipe::shadow::{PipelineKind, ShadowConfig, ShadowKind};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidPlan = 4,
    Io = 5,
    NotFound = 6,
    NotReady = 7,
    Stale = 8,
    Engine = 9,
    Panic = 10,
}

/// A loaded corpus.
pub struct SpDataset {
    data: Arc<Dataset>,
}

/// An open session: plan, latest run and suggestions.
pub struct SpSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(SpStatus, String);

type FfiResult<T> = Result<T, Failure>;

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownSuggestion(_) => SpStatus::NotFound,
            SessionError::NotReady { .. } => SpStatus::NotReady,
            SessionError::Stale(_) => SpStatus::Stale,
            SessionError::Plan(_) => SpStatus::InvalidPlan,
            _ => SpStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SpStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(SpStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SpStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure(SpStatus::NullArgument, format!("{what} is null")))
}

fn owned_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(SpStatus::Engine, "output contains NUL".into()))
}

fn to_json<T: serde::Serialize>(v: &T) -> FfiResult<*mut c_char> {
    let s = serde_json::to_string(v).map_err(|e| Failure(SpStatus::Engine, e.to_string()))?;
    owned_string(s)
}

fn parse_plan(spec: &str) -> FfiResult<PipelinePlan> {
    if let Ok(kind) = spec.parse::<PipelineKind>() {
        return Ok(kind.plan());
    }
    PipelinePlan::parse(spec).map_err(|e| Failure(SpStatus::InvalidPlan, e.to_string()))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn sp_status_name(status: SpStatus) -> *const c_char {
    let s: &'static CStr = match status {
        SpStatus::Ok => c"ok",
        SpStatus::NullArgument => c"null_argument",
        SpStatus::InvalidUtf8 => c"invalid_utf8",
        SpStatus::InvalidArgument => c"invalid_argument",
        SpStatus::InvalidPlan => c"invalid_plan",
        SpStatus::Io => c"io",
        SpStatus::NotFound => c"not_found",
        SpStatus::NotReady => c"not_ready",
        SpStatus::Stale => c"stale",
        SpStatus::Engine => c"engine",
        SpStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Generates the default synthetic corpus with `seed`.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_generate(seed: u64, out: *mut *mut SpDataset) -> SpStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let cfg = CorpusConfig {
            seed,
            ..CorpusConfig::default()
        };
        let bundle = generate_corpus(&cfg).map_err(|e| Failure(SpStatus::Engine, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpDataset {
            data: Arc::new(Dataset::from_bundle(&bundle)),
        }));
        Ok(())
    })
}

/// Loads a corpus directory written by `gen-corpus`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_load(dir: *const c_char, out: *mut *mut SpDataset) -> SpStatus {
    guard(|| {
        let dir = text(dir, "dir")?;
        let out = out_ptr(out, "out")?;
        let data = Dataset::load(Path::new(dir)).map_err(|e| Failure(SpStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpDataset { data: Arc::new(data) }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from `sp_dataset_*` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sp_dataset_free(dataset: *mut SpDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Executes `plan` (JSON text, or `rag` / `train`) on `dataset` and opens a
/// session. The session keeps its own reference to the data.
///
/// # Safety
/// `dataset` must be a live handle, `plan` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_session_open(
    dataset: *const SpDataset,
    plan: *const c_char,
    out: *mut *mut SpSession,
) -> SpStatus {
    guard(|| {
        let ds = dataset
            .as_ref()
            .ok_or_else(|| Failure(SpStatus::NullArgument, "dataset is null".into()))?;
        let plan = parse_plan(text(plan, "plan")?)?;
        let out = out_ptr(out, "out")?;
        let session = Session::open(
            "ffi",
            plan,
            Arc::clone(&ds.data),
            ShadowConfig::default(),
            LatencyConfig::default(),
        )?;
        *out = Box::into_raw(Box::new(SpSession { session }));
        Ok(())
    })
}

/// # Safety
/// `session` must come from `sp_session_open` and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sp_session_free(session: *mut SpSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

unsafe fn session_ref<'a>(p: *const SpSession) -> FfiResult<&'a SpSession> {
    p.as_ref()
        .ok_or_else(|| Failure(SpStatus::NullArgument, "session is null".into()))
}

unsafe fn session_mut<'a>(p: *mut SpSession) -> FfiResult<&'a mut SpSession> {
    p.as_mut()
        .ok_or_else(|| Failure(SpStatus::NullArgument, "session is null".into()))
}

/// Accuracy of the session's current run.
///
/// # Safety
/// `session` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_session_accuracy(session: *const SpSession, out: *mut f64) -> SpStatus {
    guard(|| {
        let s = session_ref(session)?;
        *out_ptr(out, "out")? = s.session.accuracy();
        Ok(())
    })
}

/// Runs shadow pipelines: `all`, or a comma-separated list of `slices`,
/// `label-errors`, `data-errors`. Blocks until they finish.
///
/// # Safety
/// `session` must be a live handle and `shadows` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_session_analyze(session: *mut SpSession, shadows: *const c_char) -> SpStatus {
    guard(|| {
        let s = session_mut(session)?;
        let spec = text(shadows, "shadows")?;
        let kinds: Vec<ShadowKind> = if spec == "all" {
            ShadowKind::ALL.to_vec()
        } else {
            spec.split(',')
                .map(|k| k.trim().parse::<ShadowKind>())
                .collect::<Result<_, _>>()
                .map_err(|e| Failure(SpStatus::InvalidArgument, e))?
        };
        s.session.analyze(&kinds);
        Ok(())
    })
}

/// Ranked suggestions as a JSON array.
///
/// # Safety
/// `session` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sp_session_suggestions_json(session: *const SpSession, out: *mut *mut c_char) -> SpStatus {
    guard(|| {
        let s = session_ref(session)?;
        *out_ptr(out, "out")? = to_json(&s.session.suggestions())?;
        Ok(())
    })
}

/// Applies a ready suggestion; writes the outcome as JSON to `out` when it
/// is not null.
///
/// # Safety
/// `session` must be a live handle, `id` NUL-terminated, `out` null or valid.
#[no_mangle]
pub unsafe extern "C" fn sp_session_apply(
    session: *mut SpSession,
    id: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let s = session_mut(session)?;
        let applied = s.session.apply(text(id, "id")?)?;
        if let Some(out) = out.as_mut() {
            *out = to_json(&applied)?;
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be a live handle and `id` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_session_dismiss(session: *mut SpSession, id: *const c_char) -> SpStatus {
    guard(|| {
        let s = session_mut(session)?;
        s.session.dismiss(text(id, "id")?)?;
        Ok(())
    })
}

/// Replaces the plan, maintaining the run incrementally where possible;
/// writes the maintenance report as JSON to `out` when it is not null.
///
/// # Safety
/// `session` must be a live handle, `plan` NUL-terminated, `out` null or
/// valid.
#[no_mangle]
pub unsafe extern "C" fn sp_session_update_plan(
    session: *mut SpSession,
    plan: *const c_char,
    out: *mut *mut c_char,
) -> SpStatus {
    guard(|| {
        let s = session_mut(session)?;
        let plan = parse_plan(text(plan, "plan")?)?;
        let report = s.session.update_plan(plan)?;
        if let Some(out) = out.as_mut() {
            *out = to_json(&report)?;
        }
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
