//! C interface. Every function returns an [`NdmStatus`]; on failure the
//! message is available from [`ndm_last_error`] on the same thread. Arrays are
//! row-major `double` buffers with explicit lengths. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use ndm::error::NdmError;
use ndm::eval;
use ndm::io::read_partition;
use ndm::linalg::Matrix;
use ndm::mi;
use ndm::Partition;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NdmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    OutOfRange = 4,
    NoEffect = 5,
    NotOrthogonal = 6,
    InsufficientSamples = 7,
    Io = 8,
    Malformed = 9,
    Panic = 10,
}

/// Opaque partition handle.
pub struct NdmPartition {
    inner: Partition,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NdmGiniReport {
    pub raw: f64,
    pub per_dim: f64,
    pub per_var: f64,
    /// Negative effects clamped to zero.
    pub clamped: usize,
    /// Zero-variance subspaces left out of `per_var`.
    pub excluded: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &NdmError) -> NdmStatus {
    match e {
        NdmError::ShapeMismatch(_) | NdmError::LengthMismatch { .. } | NdmError::BadConfiguration { .. } => {
            NdmStatus::ShapeMismatch
        }
        NdmError::OutOfRange { .. } => NdmStatus::OutOfRange,
        NdmError::NoEffect => NdmStatus::NoEffect,
        NdmError::NotOrthogonal(_) => NdmStatus::NotOrthogonal,
        NdmError::InsufficientSamples { .. } => NdmStatus::InsufficientSamples,
        NdmError::Io(_) => NdmStatus::Io,
        NdmError::Malformed { .. }
        | NdmError::MagicMismatch { .. }
        | NdmError::UnsupportedVersion(_)
        | NdmError::UnsupportedDtype(_)
        | NdmError::Truncated { .. } => NdmStatus::Malformed,
        _ => NdmStatus::InvalidArgument,
    }
}

struct Fail(NdmStatus, String);

impl From<NdmError> for Fail {
    fn from(e: NdmError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NdmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NdmStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            NdmStatus::Panic
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(NdmStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail(NdmStatus::NullPointer, format!("{name} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(NdmStatus::NullPointer, format!("{name} is null")))
}

unsafe fn handle<'a>(p: *const NdmPartition) -> Result<&'a Partition, Fail> {
    p.as_ref().map(|h| &h.inner).ok_or_else(|| Fail(NdmStatus::NullPointer, "partition handle is null".into()))
}

fn area(rows: usize, cols: usize) -> Result<usize, Fail> {
    rows.checked_mul(cols).ok_or_else(|| Fail(NdmStatus::InvalidArgument, "size overflow".into()))
}

fn matrix(data: &[f64], rows: usize, cols: usize) -> Result<Matrix, Fail> {
    Ok(Matrix::from_vec(rows, cols, data.to_vec())?)
}

/// Message for the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ndm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ndm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a partition from a row-major `d × d` orthogonal `r` and `s`
/// subspace dimensions summing to `d`.
///
/// # Safety
/// `r` must hold `d * d` doubles, `dims` `s` sizes, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_new(
    r: *const f64,
    d: usize,
    dims: *const usize,
    s: usize,
    out: *mut *mut NdmPartition,
) -> NdmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let r = matrix(input(r, area(d, d)?, "r")?, d, d)?;
        let p = Partition::new(r, input(dims, s, "dims")?.to_vec())?;
        *out = Box::into_raw(Box::new(NdmPartition { inner: p }));
        Ok(())
    })
}

/// Loads a partition file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_load(path: *const c_char, out: *mut *mut NdmPartition) -> NdmStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(Fail(NdmStatus::NullPointer, "path is null".into()));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Fail(NdmStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let file = read_partition(Path::new(path))?;
        *out = Box::into_raw(Box::new(NdmPartition { inner: file.partition }));
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_free(p: *mut NdmPartition) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Ambient dimension `d` and number of subspaces `s`.
///
/// # Safety
/// `p` must be a live handle; `d` and `s` writable.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_shape(p: *const NdmPartition, d: *mut usize, s: *mut usize) -> NdmStatus {
    guard(|| {
        let p = handle(p)?;
        *out_ref(d, "d")? = p.d();
        *out_ref(s, "s")? = p.num_subspaces();
        Ok(())
    })
}

/// Copies the `s` subspace dimensions into `dims`.
///
/// # Safety
/// `dims` must have room for `len` values.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_dims(p: *const NdmPartition, dims: *mut usize, len: usize) -> NdmStatus {
    guard(|| {
        let p = handle(p)?;
        if len != p.num_subspaces() {
            return Err(NdmError::LengthMismatch { expected: p.num_subspaces(), actual: len }.into());
        }
        output(dims, len, "dims")?.copy_from_slice(p.dims());
        Ok(())
    })
}

/// Copies `R` (row-major, `d * d` values) into `r`.
///
/// # Safety
/// `r` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_rotation(p: *const NdmPartition, r: *mut f64, len: usize) -> NdmStatus {
    guard(|| {
        let p = handle(p)?;
        let n = p.d() * p.d();
        if len != n {
            return Err(NdmError::LengthMismatch { expected: n, actual: len }.into());
        }
        output(r, len, "r")?.copy_from_slice(p.r().as_slice());
        Ok(())
    })
}

/// `Rᵀ · replace_block(R h_cln, s ← block_s(R h_crp))` into `out`; all
/// vectors have length `d`.
///
/// # Safety
/// `h_cln`, `h_crp` and `out` must each hold `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndm_patch_compose(
    p: *const NdmPartition,
    h_cln: *const f64,
    h_crp: *const f64,
    d: usize,
    s: usize,
    out: *mut f64,
) -> NdmStatus {
    guard(|| {
        let p = handle(p)?;
        let v = eval::patch_compose(input(h_cln, d, "h_cln")?, input(h_crp, d, "h_crp")?, p, s)?;
        output(out, d, "out")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Gini coefficient of `n` effects; negatives are clamped to zero and
/// counted in `clamped` (may be null).
///
/// # Safety
/// `effects` must hold `n` doubles and `value` be writable.
#[no_mangle]
pub unsafe extern "C" fn ndm_gini(effects: *const f64, n: usize, value: *mut f64, clamped: *mut usize) -> NdmStatus {
    guard(|| {
        let g = eval::gini(input(effects, n, "effects")?)?;
        *out_ref(value, "value")? = g.value;
        if let Some(c) = clamped.as_mut() {
            *c = g.clamped;
        }
        Ok(())
    })
}

/// Gini over effects, effects per dimension, and effects per variance.
///
/// # Safety
/// `effects`, `dims` and `variances` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn ndm_gini_report(
    effects: *const f64,
    dims: *const usize,
    variances: *const f64,
    n: usize,
    out: *mut NdmGiniReport,
) -> NdmStatus {
    guard(|| {
        let rec = eval::PatchingRecord::new(
            input(effects, n, "effects")?.to_vec(),
            input(dims, n, "dims")?.to_vec(),
            input(variances, n, "variances")?.to_vec(),
        )?;
        let r = eval::gini_report(&rec)?;
        *out_ref(out, "out")? = NdmGiniReport {
            raw: r.raw,
            per_dim: r.per_dim,
            per_var: r.per_var,
            clamped: r.clamped,
            excluded: r.excluded_zero_variance.len(),
        };
        Ok(())
    })
}

/// KSG mutual information (nats, clamped at 0) between `x` (`n × dx`) and
/// `y` (`n × dy`), both row-major.
///
/// # Safety
/// `x` and `y` must hold `n * dx` and `n * dy` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndm_ksg_mi(
    x: *const f64,
    dx: usize,
    y: *const f64,
    dy: usize,
    n: usize,
    k: usize,
    out: *mut f64,
) -> NdmStatus {
    guard(|| {
        let xm = matrix(input(x, area(n, dx)?, "x")?, n, dx)?;
        let ym = matrix(input(y, area(n, dy)?, "y")?, n, dy)?;
        *out_ref(out, "out")? = mi::ksg_mi(&xm, &ym, k)?;
        Ok(())
    })
}

/// Normalized pairwise MI between the partition's subspaces over `n`
/// activations (`n × d`, row-major), written as an `s × s` row-major grid.
///
/// # Safety
/// `data` must hold `n * d` doubles and `out` `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ndm_partition_mi(
    p: *const NdmPartition,
    data: *const f64,
    n: usize,
    k: usize,
    out: *mut f64,
    len: usize,
) -> NdmStatus {
    guard(|| {
        let p = handle(p)?;
        let s = p.num_subspaces();
        if len != s * s {
            return Err(NdmError::LengthMismatch { expected: s * s, actual: len }.into());
        }
        let m = mi::partition_mi(&matrix(input(data, area(n, p.d())?, "data")?, n, p.d())?, p, k)?;
        output(out, len, "out")?.copy_from_slice(m.normalized.as_slice());
        Ok(())
    })
}
