//! C ABI over the recommender core.
//!
//! Every fallible function returns a [`WeuStatus`]. On failure the message is
//! kept per thread and can be read with [`weu_last_error`]. Models are opaque
//! handles created by [`weu_model_load`] and released by [`weu_model_free`].

use std::cell::RefCell;
use std::collections::HashSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use weu::checkpoint::Checkpoint;
use weu::data::SplitDataset;
use weu::evaluation::metrics_at_k;
use weu::ingest::read_split;
use weu::probability::{build_histograms, weight, HistogramStore, PwfKind, PwfParams};
use weu::scorer::sort_ranked;
use weu::utility::utility;
use weu::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    ShapeMismatch = 5,
    CatalogTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeuPwfKind {
    Identity = 0,
    Tf = 1,
    TfPlus = 2,
    Prelec = 3,
    PrelecPlus = 4,
}

fn pwf_kind(code: i32) -> Option<PwfKind> {
    Some(match code {
        c if c == WeuPwfKind::Identity as i32 => PwfKind::Identity,
        c if c == WeuPwfKind::Tf as i32 => PwfKind::Tf,
        c if c == WeuPwfKind::TfPlus as i32 => PwfKind::TfPlus,
        c if c == WeuPwfKind::Prelec as i32 => PwfKind::Prelec,
        c if c == WeuPwfKind::PrelecPlus as i32 => PwfKind::PrelecPlus,
        _ => return None,
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeuMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

/// A loaded checkpoint together with the dataset it was trained on.
pub struct WeuModel {
    dataset: SplitDataset,
    checkpoint: Checkpoint,
    hists: HistogramStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: WeuStatus, message: impl Into<String>) -> WeuStatus {
    set_error(message);
    status
}

fn from_error(err: Error) -> WeuStatus {
    let status = match &err {
        Error::Io { .. } => WeuStatus::Io,
        Error::Parse { .. } | Error::RatingRange { .. } | Error::File { .. } | Error::Json(_) => WeuStatus::Format,
        Error::ShapeMismatch { .. } => WeuStatus::ShapeMismatch,
        Error::CatalogTooSmall { .. } => WeuStatus::CatalogTooSmall,
        Error::EmptyHistogram | Error::Config(_) => WeuStatus::InvalidArgument,
    };
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> WeuStatus) -> WeuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == WeuStatus::Ok {
                LAST_ERROR.with(|e| *e.borrow_mut() = None);
            }
            status
        }
        Err(_) => fail(WeuStatus::Panic, "internal panic"),
    }
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a Path, WeuStatus> {
    if p.is_null() {
        return Err(fail(WeuStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(WeuStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn items_arg<'a>(items: *const usize, len: usize) -> Result<&'a [usize], WeuStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if items.is_null() {
        return Err(fail(WeuStatus::NullPointer, "item array is null"));
    }
    Ok(slice::from_raw_parts(items, len))
}

fn check_request(model: &WeuModel, user: usize, items: &[usize]) -> Result<(), WeuStatus> {
    if user >= model.dataset.user_count {
        return Err(fail(WeuStatus::InvalidArgument, format!("user {user} out of range")));
    }
    if let Some(bad) = items.iter().find(|&&i| i >= model.dataset.item_count) {
        return Err(fail(WeuStatus::InvalidArgument, format!("item {bad} out of range")));
    }
    Ok(())
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Last error message on this thread, or null. Valid until the next call
/// into this library on the same thread.
#[no_mangle]
pub extern "C" fn weu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a checkpoint and the split directory it was trained on.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn weu_model_load(
    checkpoint_path: *const c_char,
    dataset_dir: *const c_char,
    out: *mut *mut WeuModel,
) -> WeuStatus {
    guard(|| {
        if out.is_null() {
            return fail(WeuStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let ckpt_path = tri!(path_arg(checkpoint_path, "checkpoint_path"));
        let dir = tri!(path_arg(dataset_dir, "dataset_dir"));
        let loaded = read_split(dir).and_then(|dataset| {
            let checkpoint = Checkpoint::load(ckpt_path)?;
            checkpoint.check_against(&dataset)?;
            let hists = build_histograms(&dataset.train, dataset.item_count, dataset.r_max);
            Ok(WeuModel { dataset, checkpoint, hists })
        });
        match loaded {
            Ok(model) => {
                *out = Box::into_raw(Box::new(model));
                WeuStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must come from [`weu_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn weu_model_free(model: *mut WeuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn weu_model_user_count(model: *const WeuModel, out: *mut usize) -> WeuStatus {
    guard(|| match (model.as_ref(), out.is_null()) {
        (Some(m), false) => {
            *out = m.dataset.user_count;
            WeuStatus::Ok
        }
        _ => fail(WeuStatus::NullPointer, "null argument"),
    })
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn weu_model_item_count(model: *const WeuModel, out: *mut usize) -> WeuStatus {
    guard(|| match (model.as_ref(), out.is_null()) {
        (Some(m), false) => {
            *out = m.dataset.item_count;
            WeuStatus::Ok
        }
        _ => fail(WeuStatus::NullPointer, "null argument"),
    })
}

/// Dense index of a raw user id (`is_item == 0`) or item id.
///
/// # Safety
/// `model` must be a live handle, `raw_id` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn weu_model_index(
    model: *const WeuModel,
    raw_id: *const c_char,
    is_item: i32,
    out: *mut usize,
) -> WeuStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            return fail(WeuStatus::NullPointer, "null argument");
        };
        let raw = tri!(path_arg(raw_id, "raw_id")).to_str().unwrap_or_default();
        let map = if is_item != 0 { &m.dataset.items } else { &m.dataset.users };
        match map.get(raw) {
            Some(i) => {
                *out = i;
                WeuStatus::Ok
            }
            None => fail(WeuStatus::InvalidArgument, format!("unknown id {raw:?}")),
        }
    })
}

/// Scores `items[0..len]` for `user` into `scores[0..len]`.
///
/// # Safety
/// `items` and `scores` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn weu_model_score(
    model: *const WeuModel,
    user: usize,
    items: *const usize,
    len: usize,
    scores: *mut f64,
) -> WeuStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(WeuStatus::NullPointer, "model is null");
        };
        let items = tri!(items_arg(items, len));
        if len > 0 && scores.is_null() {
            return fail(WeuStatus::NullPointer, "scores is null");
        }
        tri!(check_request(m, user, items));
        let values = m.checkpoint.scorer(&m.hists).score_items(user, items);
        if len > 0 {
            slice::from_raw_parts_mut(scores, len).copy_from_slice(&values);
        }
        WeuStatus::Ok
    })
}

/// Orders `items` by score, highest first with ties to the lower index, and
/// writes the ordered items and their scores.
///
/// # Safety
/// `items`, `out_items` and `out_scores` must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn weu_model_rank(
    model: *const WeuModel,
    user: usize,
    items: *const usize,
    len: usize,
    out_items: *mut usize,
    out_scores: *mut f64,
) -> WeuStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(WeuStatus::NullPointer, "model is null");
        };
        let items = tri!(items_arg(items, len));
        if len > 0 && (out_items.is_null() || out_scores.is_null()) {
            return fail(WeuStatus::NullPointer, "output array is null");
        }
        tri!(check_request(m, user, items));
        let scores = m.checkpoint.scorer(&m.hists).score_items(user, items);
        let mut ranked: Vec<(usize, f64)> = items.iter().copied().zip(scores).collect();
        sort_ranked(&mut ranked);
        for (pos, (item, score)) in ranked.into_iter().enumerate() {
            *out_items.add(pos) = item;
            *out_scores.add(pos) = score;
        }
        WeuStatus::Ok
    })
}

/// Probability weighting `w(p)` for a `WeuPwfKind` code; θ is ignored by
/// kinds that fix it at 1.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn weu_pwf_weight(
    kind: i32,
    p: f64,
    delta: f64,
    gamma: f64,
    theta: f64,
    out: *mut f64,
) -> WeuStatus {
    guard(|| {
        if out.is_null() {
            return fail(WeuStatus::NullPointer, "out is null");
        }
        let Some(kind) = pwf_kind(kind) else {
            return fail(WeuStatus::InvalidArgument, format!("unknown weighting kind {kind}"));
        };
        let params = PwfParams::new(delta, gamma, theta);
        if !(0.0..=1.0).contains(&p) || !params.is_valid() {
            return fail(WeuStatus::InvalidArgument, "need p in [0, 1], 0 < delta < 1, gamma > 0, 0 < theta <= 1");
        }
        *out = weight(kind, p, params);
        WeuStatus::Ok
    })
}

/// Piecewise tanh utility: `alpha * tanh(o)` for `o >= 0`, `beta * tanh(o)` otherwise.
#[no_mangle]
pub extern "C" fn weu_utility(outcome: f64, alpha: f64, beta: f64) -> f64 {
    utility(outcome, alpha, beta)
}

/// Precision, recall, F1 and NDCG of the top `k` of `ranked`.
///
/// # Safety
/// `ranked` must hold `ranked_len` and `relevant` `relevant_len` elements.
#[no_mangle]
pub unsafe extern "C" fn weu_metrics_at_k(
    ranked: *const usize,
    ranked_len: usize,
    relevant: *const usize,
    relevant_len: usize,
    k: usize,
    out: *mut WeuMetrics,
) -> WeuStatus {
    guard(|| {
        if out.is_null() {
            return fail(WeuStatus::NullPointer, "out is null");
        }
        let ranked = tri!(items_arg(ranked, ranked_len));
        let relevant: HashSet<usize> = tri!(items_arg(relevant, relevant_len)).iter().copied().collect();
        if k == 0 || relevant.is_empty() {
            return fail(WeuStatus::InvalidArgument, "need k >= 1 and a non-empty relevant set");
        }
        let m = metrics_at_k(ranked, &relevant, k);
        *out = WeuMetrics { precision: m.precision, recall: m.recall, f1: m.f1, ndcg: m.ndcg };
        WeuStatus::Ok
    })
}
