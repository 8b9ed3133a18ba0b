//! C ABI for `tsk-core`.
//!
//! Kernel matrices and classifier traces cross the boundary as opaque
//! handles. Every fallible function returns a [`TskStatus`]; the message of
//! the most recent failure on the calling thread is available from
//! [`tsk_last_error`]. Class labels are 1-based and matrix indices 0-based.
//!
//! The header `include/tsk.h` is generated by cbindgen at build time.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use tsk_core::eval::{McNemarMethod, McNemarResult};
use tsk_core::matrix::{self, KernelMatrix, Stage};
use tsk_core::ngram::{KernelConfig, KernelFamily};
use tsk_core::tkc::{self, TkcConfig, TkcTrace};
use tsk_core::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TskStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Io = 4,
    Format = 5,
    Numerical = 6,
    OutOfRange = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TskKernelFamily {
    Presence = 0,
    Intersection = 1,
    Spectrum = 2,
}

impl From<TskKernelFamily> for KernelFamily {
    fn from(f: TskKernelFamily) -> Self {
        match f {
            TskKernelFamily::Presence => KernelFamily::Presence,
            TskKernelFamily::Intersection => KernelFamily::Intersection,
            TskKernelFamily::Spectrum => KernelFamily::Spectrum,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TskStage {
    Raw = 0,
    Normalized = 1,
    Rbf = 2,
    Transductive = 3,
}

impl From<TskStage> for Stage {
    fn from(s: TskStage) -> Self {
        match s {
            TskStage::Raw => Stage::Raw,
            TskStage::Normalized => Stage::Normalized,
            TskStage::Rbf => Stage::Rbf,
            TskStage::Transductive => Stage::Transductive,
        }
    }
}

impl From<Stage> for TskStage {
    fn from(s: Stage) -> Self {
        match s {
            Stage::Raw => TskStage::Raw,
            Stage::Normalized => TskStage::Normalized,
            Stage::Rbf => TskStage::Rbf,
            Stage::Transductive => TskStage::Transductive,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TskKernelConfig {
    pub family: TskKernelFamily,
    pub p_min: usize,
    pub p_max: usize,
    pub lowercase: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TskMcNemar {
    pub b: u64,
    pub c: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    /// 0 = continuity-corrected chi-squared, 1 = exact binomial.
    pub exact: bool,
}

/// Opaque kernel matrix.
pub struct TskMatrix(KernelMatrix);

/// Opaque classifier trace.
pub struct TskTrace(TkcTrace);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> TskStatus {
    match err {
        Error::Io { .. } => TskStatus::Io,
        Error::CorruptMatrix { .. } | Error::MalformedLine { .. } => TskStatus::Format,
        Error::NotPositiveDefinite { .. } => TskStatus::Numerical,
        Error::IndexOutOfRange { .. } | Error::LabelOutOfRange { .. } => TskStatus::OutOfRange,
        _ => TskStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> TskStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f`, converting panics into [`TskStatus::Panic`].
fn guard(f: impl FnOnce() -> TskStatus) -> TskStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            TskStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(
            if $p.is_null() {
                set_error(concat!("`", stringify!($p), "` is null"));
                return TskStatus::NullPointer;
            }
        )+
    };
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TskStatus> {
    if p.is_null() {
        set_error(format!("`{what}` is null"));
        return Err(TskStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("`{what}` is not valid UTF-8"));
        TskStatus::Utf8
    })
}

unsafe fn str_array<'a>(
    p: *const *const c_char,
    len: usize,
    what: &str,
) -> Result<Vec<&'a str>, TskStatus> {
    if len == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        set_error(format!("`{what}` is null"));
        return Err(TskStatus::NullPointer);
    }
    slice::from_raw_parts(p, len)
        .iter()
        .map(|&s| str_arg(s, what))
        .collect()
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        slice::from_raw_parts(p, len)
    }
}

fn kernel_config(cfg: &TskKernelConfig) -> Result<KernelConfig, TskStatus> {
    KernelConfig::new(cfg.family.into(), cfg.p_min, cfg.p_max)
        .map(|k| k.with_lowercase(cfg.lowercase))
        .map_err(fail)
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tsk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The default configuration: presence kernel, n-grams of length 5 to 8, lowercased.
#[no_mangle]
pub extern "C" fn tsk_kernel_config_default() -> TskKernelConfig {
    TskKernelConfig {
        family: TskKernelFamily::Presence,
        p_min: 5,
        p_max: 8,
        lowercase: true,
    }
}

/// Blended string kernel between two NUL-terminated UTF-8 texts.
#[no_mangle]
pub unsafe extern "C" fn tsk_kernel_value(
    a: *const c_char,
    b: *const c_char,
    config: *const TskKernelConfig,
    out: *mut f64,
) -> TskStatus {
    guard(|| {
        non_null!(config, out);
        let cfg = match kernel_config(&*config) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let (a, b) = match (str_arg(a, "a"), str_arg(b, "b")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        *out = tsk_core::ngram::blended_kernel(a, b, &cfg);
        TskStatus::Ok
    })
}

/// Builds the raw kernel matrix over `train` followed by `test`.
/// Free the result with [`tsk_matrix_free`].
#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_build(
    train: *const *const c_char,
    m: usize,
    test: *const *const c_char,
    n: usize,
    config: *const TskKernelConfig,
    out: *mut *mut TskMatrix,
) -> TskStatus {
    guard(|| {
        non_null!(config, out);
        *out = ptr::null_mut();
        let cfg = match kernel_config(&*config) {
            Ok(c) => c,
            Err(s) => return s,
        };
        let train = match str_array(train, m, "train") {
            Ok(v) => v,
            Err(s) => return s,
        };
        let test = match str_array(test, n, "test") {
            Ok(v) => v,
            Err(s) => return s,
        };
        match matrix::build_full_matrix(&train, &test, &cfg) {
            Ok(k) => {
                *out = Box::into_raw(Box::new(TskMatrix(k)));
                TskStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Applies the remaining transforms until the matrix reaches `stage`.
#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_advance(matrix: *mut TskMatrix, stage: TskStage) -> TskStatus {
    guard(|| {
        non_null!(matrix);
        let handle = &mut *matrix;
        match matrix::advance_to(handle.0.clone(), stage.into()) {
            Ok(k) => {
                handle.0 = k;
                TskStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes `m`, `n` and the current stage. Any output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_info(
    matrix: *const TskMatrix,
    m: *mut usize,
    n: *mut usize,
    stage: *mut TskStage,
) -> TskStatus {
    guard(|| {
        non_null!(matrix);
        let k = &(*matrix).0;
        if !m.is_null() {
            *m = k.m();
        }
        if !n.is_null() {
            *n = k.n();
        }
        if !stage.is_null() {
            *stage = k.stage().into();
        }
        TskStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_get(
    matrix: *const TskMatrix,
    i: usize,
    j: usize,
    out: *mut f64,
) -> TskStatus {
    guard(|| {
        non_null!(matrix, out);
        let k = &(*matrix).0;
        if i >= k.dim() || j >= k.dim() {
            return fail(Error::IndexOutOfRange {
                index: i.max(j),
                dim: k.dim(),
            });
        }
        *out = k.get(i, j);
        TskStatus::Ok
    })
}

/// Copies all `(m+n)^2` values, row-major, into `buf` of capacity `len`.
#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_copy(
    matrix: *const TskMatrix,
    buf: *mut f64,
    len: usize,
) -> TskStatus {
    guard(|| {
        non_null!(matrix, buf);
        let values = (*matrix).0.values().as_slice();
        if len < values.len() {
            return fail(Error::DimensionMismatch {
                expected: values.len(),
                actual: len,
            });
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        TskStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_save(
    matrix: *const TskMatrix,
    path: *const c_char,
) -> TskStatus {
    guard(|| {
        non_null!(matrix);
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match matrix::save_matrix(&(*matrix).0, Path::new(path)) {
            Ok(()) => TskStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_load(
    path: *const c_char,
    out: *mut *mut TskMatrix,
) -> TskStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match matrix::load_matrix(Path::new(path)) {
            Ok(k) => {
                *out = Box::into_raw(Box::new(TskMatrix(k)));
                TskStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn tsk_matrix_free(matrix: *mut TskMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

/// Runs the classifier on a transductive-stage matrix. `train_labels` holds
/// `m` labels in `1..=classes`. With `two_rounds` false only the first round
/// runs. Free the trace with [`tsk_trace_free`].
#[no_mangle]
pub unsafe extern "C" fn tsk_classify(
    matrix: *const TskMatrix,
    train_labels: *const u32,
    m: usize,
    classes: u32,
    r: usize,
    lambda: f64,
    two_rounds: bool,
    out: *mut *mut TskTrace,
) -> TskStatus {
    guard(|| {
        non_null!(matrix, out);
        *out = ptr::null_mut();
        if m > 0 && train_labels.is_null() {
            return fail_null("train_labels");
        }
        let labels: Vec<usize> = slice_arg(train_labels, m)
            .iter()
            .map(|&l| l as usize)
            .collect();
        let cfg = TkcConfig {
            r,
            lambda,
            classes: classes as usize,
        };
        let k = &(*matrix).0;
        let result = if two_rounds {
            tkc::run_tkc(k, &labels, &cfg)
        } else {
            tkc::run_single_round(k, &labels, &cfg)
        };
        match result {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(TskTrace(trace)));
                TskStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

fn fail_null(what: &str) -> TskStatus {
    set_error(format!("`{what}` is null"));
    TskStatus::NullPointer
}

/// Number of test samples covered by the trace.
#[no_mangle]
pub unsafe extern "C" fn tsk_trace_len(trace: *const TskTrace) -> usize {
    if trace.is_null() {
        0
    } else {
        (*trace).0.predictions().len()
    }
}

/// Copies per-test-sample results into caller buffers of length `len`
/// (which must equal [`tsk_trace_len`]). Any buffer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn tsk_trace_read(
    trace: *const TskTrace,
    len: usize,
    final_labels: *mut u32,
    round1_labels: *mut u32,
    round1_scores: *mut f64,
    promoted: *mut bool,
) -> TskStatus {
    guard(|| {
        non_null!(trace);
        let t = &(*trace).0;
        let n = t.predictions().len();
        if len != n {
            return fail(Error::DimensionMismatch {
                expected: n,
                actual: len,
            });
        }
        if n == 0 {
            return TskStatus::Ok;
        }
        if !final_labels.is_null() {
            for (dst, &p) in slice::from_raw_parts_mut(final_labels, n)
                .iter_mut()
                .zip(t.predictions())
            {
                *dst = p as u32;
            }
        }
        if !round1_labels.is_null() {
            for (dst, &p) in slice::from_raw_parts_mut(round1_labels, n)
                .iter_mut()
                .zip(&t.round1.predicted)
            {
                *dst = p as u32;
            }
        }
        if !round1_scores.is_null() {
            slice::from_raw_parts_mut(round1_scores, n).copy_from_slice(&t.round1.confidence);
        }
        if !promoted.is_null() {
            let flags = slice::from_raw_parts_mut(promoted, n);
            flags.fill(false);
            for &i in &t.promoted {
                flags[i] = true;
            }
        }
        TskStatus::Ok
    })
}

#[no_mangle]
pub unsafe extern "C" fn tsk_trace_free(trace: *mut TskTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// McNemar's test of classifier A against B on `len` paired predictions.
#[no_mangle]
pub unsafe extern "C" fn tsk_mcnemar(
    pred_a: *const u32,
    pred_b: *const u32,
    gold: *const u32,
    len: usize,
    out: *mut TskMcNemar,
) -> TskStatus {
    guard(|| {
        non_null!(out);
        if len > 0 && (pred_a.is_null() || pred_b.is_null() || gold.is_null()) {
            return fail_null("predictions");
        }
        let conv = |p: *const u32| -> Vec<usize> {
            slice_arg(p, len).iter().map(|&v| v as usize).collect()
        };
        match tsk_core::eval::mcnemar(&conv(pred_a), &conv(pred_b), &conv(gold)) {
            Ok(r) => {
                *out = mcnemar_out(&r);
                TskStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

fn mcnemar_out(r: &McNemarResult) -> TskMcNemar {
    TskMcNemar {
        b: r.b,
        c: r.c,
        statistic: r.statistic,
        p_value: r.p_value,
        significant: r.significant_at_0_01,
        exact: r.method == McNemarMethod::ExactBinomial,
    }
}
