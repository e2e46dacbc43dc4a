//! C ABI over the conformal core.
//!
//! Objects are opaque handles created by `stcp_*_new`/`stcp_calibrate`/
//! `stcp_band_build` and released by the matching `*_free`. Every fallible
//! call returns an [`StcpStatus`]; on failure `stcp_last_error` gives a
//! message for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use stcp::conformal::{
    build_band, conformal_quantile, coverage_beta, empirical_coverage, BandInputs, PredictionBand, QuantileField,
};
use stcp::{Dims, Error, FieldStack};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StcpStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Shape = 4,
    Format = 5,
    Io = 6,
    Divergence = 7,
    BufferSize = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StcpMethod {
    Aer = 0,
    Std = 1,
    Cqr = 2,
}

/// Stack of `n` samples of a `[T, Nx, Ny, V]` field, row-major per sample.
pub struct StcpStack {
    inner: FieldStack,
}

/// Per-cell conformal quantile.
pub struct StcpQuantile {
    inner: QuantileField,
}

/// Lower and upper band edges, same layout as the stack they were built on.
pub struct StcpBand {
    inner: PredictionBand,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StcpCoverage {
    pub mean_coverage: f64,
    pub min_cell_coverage: f64,
    pub max_cell_coverage: f64,
    /// Mean width over finite cells.
    pub tightness: f64,
    pub n_infinite: usize,
    pub n_cal: usize,
    pub n_val: usize,
    /// Central interval of the coverage law; valid when `has_beta`.
    pub beta_lo: f64,
    pub beta_hi: f64,
    pub has_beta: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(StcpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::Config(_) => StcpStatus::Config,
            Error::Data(_) => StcpStatus::Data,
            Error::Shape(_) => StcpStatus::Shape,
            Error::Format(_) => StcpStatus::Format,
            Error::Io { .. } => StcpStatus::Io,
            Error::Divergence { .. } => StcpStatus::Divergence,
            Error::Stage { .. } => unreachable!("root() unwraps stages"),
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(StcpStatus::NullPointer, format!("{what} is null"))
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StcpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            StcpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StcpStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn inputs(method: StcpMethod, a: *const StcpStack, b: *const StcpStack) -> Result<BandInputs, Failure> {
    let a = borrow(a, "first prediction stack")?.inner.clone();
    Ok(match method {
        StcpMethod::Aer => BandInputs::Aer { pred: a },
        StcpMethod::Std => BandInputs::Std {
            mu: a,
            sigma: borrow(b, "sigma stack")?.inner.clone(),
        },
        StcpMethod::Cqr => BandInputs::Cqr {
            lo: a,
            hi: borrow(b, "upper quantile stack")?.inner.clone(),
        },
    })
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next `stcp_*` call on the same thread.
#[no_mangle]
pub extern "C" fn stcp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stcp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy `len` values into a new stack of samples with dims `[t, nx, ny, nvar]`.
/// `len` must be a positive multiple of `t * nx * ny * nvar`.
///
/// # Safety
/// `data` must point to `len` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stcp_stack_new(
    t: usize,
    nx: usize,
    ny: usize,
    nvar: usize,
    data: *const f64,
    len: usize,
    out: *mut *mut StcpStack,
) -> StcpStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let inner = FieldStack::new(Dims::new(t, nx, ny, nvar), values)?;
        *out = Box::into_raw(Box::new(StcpStack { inner }));
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or a handle from `stcp_stack_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stcp_stack_free(stack: *mut StcpStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stcp_stack_n_samples(stack: *const StcpStack) -> usize {
    stack.as_ref().map_or(0, |s| s.inner.n_samples())
}

/// Cells per sample, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stcp_stack_cells(stack: *const StcpStack) -> usize {
    stack.as_ref().map_or(0, |s| s.inner.cells())
}

/// Calibrate at miscoverage `alpha` from calibration predictions and truth.
/// `a` is the point prediction (AER), the MC mean (STD) or the lower
/// quantile (CQR); `b` is the MC std (STD) or the upper quantile (CQR) and
/// is ignored for AER.
///
/// # Safety
/// Stack arguments must be live handles (`b` may be null for AER) and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stcp_calibrate(
    method: StcpMethod,
    a: *const StcpStack,
    b: *const StcpStack,
    truth: *const StcpStack,
    alpha: f64,
    out: *mut *mut StcpQuantile,
) -> StcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let truth = &borrow(truth, "truth")?.inner;
        let scores = inputs(method, a, b)?.scores(truth)?;
        let inner = conformal_quantile(&scores, alpha)?;
        *out = Box::into_raw(Box::new(StcpQuantile { inner }));
        Ok(())
    })
}

/// # Safety
/// `q` must be null or a handle from `stcp_calibrate` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stcp_quantile_free(q: *mut StcpQuantile) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

/// Number of cells in the quantile field, or 0 for a null handle.
///
/// # Safety
/// `q` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stcp_quantile_len(q: *const StcpQuantile) -> usize {
    q.as_ref().map_or(0, |q| q.inner.q.data().len())
}

/// Copy the quantile field into `buf`; `len` must equal `stcp_quantile_len`.
/// Cells whose rank overflowed hold `+INFINITY`.
///
/// # Safety
/// `q` must be a live handle and `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn stcp_quantile_values(q: *const StcpQuantile, buf: *mut f64, len: usize) -> StcpStatus {
    guard(|| {
        let src = borrow(q, "quantile")?.inner.q.data();
        copy_out(src, buf, len)
    })
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Failure> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len != src.len() {
        return Err(Failure(
            StcpStatus::BufferSize,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
    Ok(())
}

/// Build the calibrated band for new predictions `a`/`b` (same roles as in
/// `stcp_calibrate`).
///
/// # Safety
/// Arguments must be live handles (`b` may be null for AER) and `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn stcp_band_build(
    q: *const StcpQuantile,
    method: StcpMethod,
    a: *const StcpStack,
    b: *const StcpStack,
    out: *mut *mut StcpBand,
) -> StcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let q = &borrow(q, "quantile")?.inner;
        let inner = build_band(&inputs(method, a, b)?, q)?;
        *out = Box::into_raw(Box::new(StcpBand { inner }));
        Ok(())
    })
}

/// # Safety
/// `band` must be null or a handle from `stcp_band_build` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stcp_band_free(band: *mut StcpBand) {
    if !band.is_null() {
        drop(Box::from_raw(band));
    }
}

/// Values per edge (samples times cells), or 0 for a null handle.
///
/// # Safety
/// `band` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stcp_band_len(band: *const StcpBand) -> usize {
    band.as_ref().map_or(0, |b| b.inner.lower.data().len())
}

/// Copy both edges; each buffer holds `len == stcp_band_len(band)` doubles.
///
/// # Safety
/// `band` must be a live handle; `lower` and `upper` must each hold `len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn stcp_band_edges(
    band: *const StcpBand,
    lower: *mut f64,
    upper: *mut f64,
    len: usize,
) -> StcpStatus {
    guard(|| {
        let b = &borrow(band, "band")?.inner;
        copy_out(b.lower.data(), lower, len)?;
        copy_out(b.upper.data(), upper, len)
    })
}

/// Empirical coverage of `band` on `truth`.
///
/// # Safety
/// `band` and `truth` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn stcp_coverage(
    band: *const StcpBand,
    truth: *const StcpStack,
    out: *mut StcpCoverage,
) -> StcpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let r = empirical_coverage(&borrow(band, "band")?.inner, &borrow(truth, "truth")?.inner)?;
        let s = r.summary();
        *out = StcpCoverage {
            mean_coverage: s.mean_coverage,
            min_cell_coverage: s.min_cell_coverage,
            max_cell_coverage: s.max_cell_coverage,
            tightness: s.tightness,
            n_infinite: s.n_infinite,
            n_cal: s.n_cal,
            n_val: s.n_val,
            beta_lo: s.beta_lo.unwrap_or(f64::NAN),
            beta_hi: s.beta_hi.unwrap_or(f64::NAN),
            has_beta: s.beta_lo.is_some(),
        };
        Ok(())
    })
}

/// Central `mass` interval of the coverage law after calibrating on
/// `n_cal` points at miscoverage `alpha`.
///
/// # Safety
/// `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn stcp_coverage_interval(
    n_cal: usize,
    alpha: f64,
    mass: f64,
    lo: *mut f64,
    hi: *mut f64,
) -> StcpStatus {
    guard(|| {
        if lo.is_null() || hi.is_null() {
            return Err(null("output pointer"));
        }
        let law = coverage_beta(n_cal, alpha, mass)?;
        *lo = law.lo;
        *hi = law.hi;
        Ok(())
    })
}
