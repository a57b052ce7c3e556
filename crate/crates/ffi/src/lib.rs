//! C ABI over the miggt engine.
//!
//! A session owns a loaded dataset, its split and a model. Every entry point
//! returns a [`MiggtStatus`]; on failure the thread's last error message is
//! readable through [`miggt_last_error_message`]. Panics are caught at the
//! boundary and reported as `MIGGT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use miggt::eval::{ndcg_at_k, rank_scores};
use miggt::io::config::{LoadedDataset, RunConfig};
use miggt::io::params_file::{load_params, save_params};
use miggt::mgdn::{coefficients, PropagationConfig};
use miggt::train::{evaluate_model, init_model, ranking_representations, train};
use miggt::{Error, MetricReport, Model, TrainData};
use ndarray::Array2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiggtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Config = 5,
    Data = 6,
    Numeric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MiggtSplit {
    Valid = 0,
    Test = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MiggtMetrics {
    pub recall_at_10: f64,
    pub recall_at_20: f64,
    pub ndcg_at_10: f64,
    pub ndcg_at_20: f64,
    pub users_evaluated: u64,
}

/// Opaque to C callers.
pub struct MiggtSession {
    config: RunConfig,
    dataset: LoadedDataset,
    data: TrainData,
    model: Model,
    /// Final representations of the current parameters, computed on demand.
    finals: Option<Array2<f64>>,
}

impl MiggtSession {
    fn finals(&mut self) -> Result<&Array2<f64>, Error> {
        if self.finals.is_none() {
            self.finals = Some(ranking_representations(&self.model, &self.config.train)?);
        }
        Ok(self.finals.as_ref().expect("just filled"))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> MiggtStatus {
    use Error::*;
    match err {
        Io { .. } => MiggtStatus::Io,
        Parse { .. }
        | EmptyInteractions(_)
        | FeatureHeader(_)
        | FeatureDim { .. }
        | FeatureRows { .. }
        | TruncatedFeatures { .. }
        | ParamFile(_)
        | Csv(_)
        | Json(_) => MiggtStatus::Format,
        InvalidConfig(_) | GridTooLarge { .. } => MiggtStatus::Config,
        InteractionOutOfRange { .. }
        | DuplicateInteraction { .. }
        | Asymmetric { .. }
        | InvalidSparse(_)
        | NoNegative(_)
        | EmptyTrainingSplit
        | NoEvaluableUsers
        | CountMismatch { .. } => MiggtStatus::Data,
        ShapeMismatch { .. } | VertexOutOfRange { .. } | KTooLarge { .. } => MiggtStatus::InvalidArgument,
        NonFiniteLoss { .. } | NonFiniteGradient { .. } => MiggtStatus::Numeric,
    }
}

struct Failure(MiggtStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MiggtStatus::NullArgument, format!("`{what}` is null"))
}

fn invalid(message: String) -> Failure {
    Failure(MiggtStatus::InvalidArgument, message)
}

/// Runs `body`, translating errors and panics into a status.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> MiggtStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            MiggtStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            MiggtStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{what}` is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn session_arg<'a>(s: *mut MiggtSession) -> Result<&'a mut MiggtSession, Failure> {
    s.as_mut().ok_or_else(|| null("session"))
}

unsafe fn out_slice<'a, T>(buf: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if buf.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(buf, len))
}

unsafe fn in_slice<'a, T>(buf: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if buf.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(buf, len))
}

fn metrics_of(report: &MetricReport) -> MiggtMetrics {
    let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
    MiggtMetrics {
        recall_at_10: get(report.recall(10)),
        recall_at_20: get(report.recall(20)),
        ndcg_at_10: get(report.ndcg(10)),
        ndcg_at_20: get(report.ndcg(20)),
        users_evaluated: report.users_evaluated as u64,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn miggt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn miggt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the run config at `config_path`, its dataset and split, and
/// initializes a model. `*out` receives the session, or null on failure.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_open(config_path: *const c_char, out: *mut *mut MiggtSession) -> MiggtStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = ptr::null_mut();
        let config = RunConfig::load(&path_arg(config_path, "config_path")?)?;
        let (dataset, data) = config.load_data()?;
        let model = init_model(&config.train, &data)?;
        *out = Box::into_raw(Box::new(MiggtSession {
            config,
            dataset,
            data,
            model,
            finals: None,
        }));
        Ok(())
    })
}

/// Releases a session. Null is ignored.
///
/// # Safety
/// `session` must come from [`miggt_session_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_free(session: *mut MiggtSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Trains from a fresh initialization with early stopping and keeps the
/// best-validation parameters. `best_epoch` (optional) receives the 1-based
/// best epoch, or 0 when no epoch ran.
///
/// # Safety
/// `session` must be live; `best_epoch` null or writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_train(session: *mut MiggtSession, best_epoch: *mut u32) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        let outcome = train(&s.config.train, &s.data)?;
        s.model = outcome.model;
        s.finals = None;
        if let Some(out) = best_epoch.as_mut() {
            *out = outcome.best_epoch.map_or(0, |e| e as u32);
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_save_params(session: *mut MiggtSession, path: *const c_char) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        save_params(&path_arg(path, "path")?, &s.model.params().named_values())?;
        Ok(())
    })
}

/// Replaces the model's parameters with those in a parameter file; names
/// and shapes must match.
///
/// # Safety
/// `session` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_load_params(session: *mut MiggtSession, path: *const c_char) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        let tensors = load_params(&path_arg(path, "path")?)?;
        s.model.params_mut().load_values(&tensors)?;
        s.finals = None;
        Ok(())
    })
}

/// Scores the current model on one split.
///
/// # Safety
/// `session` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_evaluate(
    session: *mut MiggtSession,
    split: MiggtSplit,
    out: *mut MiggtMetrics,
) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let eval_split = match split {
            MiggtSplit::Valid => s.data.validation_split()?,
            MiggtSplit::Test => s.data.test_split()?,
        };
        *out = metrics_of(&evaluate_model(&s.model, &s.config.train, &eval_split)?);
        Ok(())
    })
}

/// Number of users, or 0 for a null session.
///
/// # Safety
/// `session` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_num_users(session: *const MiggtSession) -> usize {
    session.as_ref().map_or(0, |s| s.model.num_users())
}

/// Number of items, or 0 for a null session.
///
/// # Safety
/// `session` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_num_items(session: *const MiggtSession) -> usize {
    session.as_ref().map_or(0, |s| s.model.num_items())
}

/// Representation width, or 0 for a null session.
///
/// # Safety
/// `session` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_dim(session: *const MiggtSession) -> usize {
    session.as_ref().map_or(0, |s| s.model.d())
}

/// Copies a user's final representation into `buf`, which must hold at
/// least [`miggt_session_dim`] values.
///
/// # Safety
/// `session` must be live; `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_user_embedding(
    session: *mut MiggtSession,
    user: usize,
    buf: *mut f64,
    len: usize,
) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        if user >= s.model.num_users() {
            return Err(invalid(format!("user {user} out of range for {} users", s.model.num_users())));
        }
        let d = s.model.d();
        if len < d {
            return Err(Failure(MiggtStatus::BufferTooSmall, format!("buffer holds {len} values, need {d}")));
        }
        let buf = out_slice(buf, len, "buf")?;
        let row = s.finals()?.row(user);
        for (dst, v) in buf.iter_mut().zip(row) {
            *dst = *v;
        }
        Ok(())
    })
}

/// Writes up to `k` item indices, best first, skipping the user's training
/// items. `written` receives how many were stored.
///
/// # Safety
/// `session` must be live; `items` must have room for `k` entries; `written`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_recommend(
    session: *mut MiggtSession,
    user: usize,
    k: usize,
    items: *mut usize,
    written: *mut usize,
) -> MiggtStatus {
    guard(|| {
        let s = session_arg(session)?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        *written = 0;
        let nu = s.model.num_users();
        if user >= nu {
            return Err(invalid(format!("user {user} out of range for {nu} users")));
        }
        let items = out_slice(items, k, "items")?;
        let mut seen: Vec<usize> = s.data.train.pairs().iter().filter(|p| p.0 == user).map(|p| p.1).collect();
        seen.sort_unstable();
        let finals = s.finals()?;
        let scores = finals.slice(ndarray::s![nu.., ..]).dot(&finals.row(user));
        let ranked = rank_scores(scores.view(), &seen, k);
        items[..ranked.len()].copy_from_slice(&ranked);
        *written = ranked.len();
        Ok(())
    })
}

/// Copies the external id of `item` as a NUL-terminated string. When `cap`
/// is too small nothing is copied, `needed` (optional) receives the required
/// size including the terminator, and `MIGGT_STATUS_BUFFER_TOO_SMALL` is
/// returned.
///
/// # Safety
/// `session` must be live; `buf` must have room for `cap` bytes; `needed`
/// null or writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_session_item_id(
    session: *const MiggtSession,
    item: usize,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> MiggtStatus {
    guard(|| {
        let s = session.as_ref().ok_or_else(|| null("session"))?;
        let id = s
            .dataset
            .items
            .ids()
            .get(item)
            .ok_or_else(|| invalid(format!("item {item} out of range for {} items", s.dataset.items.len())))?;
        let size = id.len() + 1;
        if let Some(n) = needed.as_mut() {
            *n = size;
        }
        if cap < size {
            return Err(Failure(MiggtStatus::BufferTooSmall, format!("buffer holds {cap} bytes, need {size}")));
        }
        let buf = out_slice(buf.cast::<u8>(), cap, "buf")?;
        buf[..id.len()].copy_from_slice(id.as_bytes());
        buf[id.len()] = 0;
        Ok(())
    })
}

/// Propagation coefficients for `(alpha, beta, k)`: `k + 1` values written to
/// `out`, which must hold at least that many.
///
/// # Safety
/// `out` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn miggt_mgdn_coefficients(alpha: f64, beta: f64, k: usize, out: *mut f64, len: usize) -> MiggtStatus {
    guard(|| {
        let cfg = PropagationConfig::new(alpha, beta, k)?;
        if len < k + 1 {
            return Err(Failure(MiggtStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", k + 1)));
        }
        let coef = coefficients(&cfg);
        out_slice(out, len, "out")?[..coef.len()].copy_from_slice(&coef);
        Ok(())
    })
}

/// NDCG@k of a ranked list against a set of relevant items (any order).
///
/// # Safety
/// `ranked` and `truth` must point to `n_ranked` and `n_truth` entries;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn miggt_ndcg_at_k(
    ranked: *const usize,
    n_ranked: usize,
    truth: *const usize,
    n_truth: usize,
    k: usize,
    out: *mut f64,
) -> MiggtStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let ranked = in_slice(ranked, n_ranked, "ranked")?;
        let mut truth = in_slice(truth, n_truth, "truth")?.to_vec();
        truth.sort_unstable();
        truth.dedup();
        *out = ndcg_at_k(ranked, &truth, k);
        Ok(())
    })
}
