//! C ABI for `eigenshift`.
//!
//! Objects are opaque heap handles created by `es_*_new`-style functions
//! and released with the matching `es_*_free`. Every fallible function
//! returns an [`EsStatus`]; on failure the message is available from
//! [`es_last_error_message`] on the same thread. Index sets are arrays of
//! 1-based indices. No function unwinds across the boundary: panics are
//! caught and reported as [`EsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use eigenshift::bounds::{self, BoundCertificate, DkMode};
use eigenshift::error::Error;
use eigenshift::models::{PerturbedPair, Provenance};
use eigenshift::spectral::{self, IndexSet, SpectralModel, SymMatrix};

/// Symmetric matrix handle.
pub struct EsMatrix(SymMatrix);

/// Eigendecomposition handle.
pub struct EsSpectralModel(SpectralModel);

/// Handle for an unperturbed/perturbed pair with both decompositions.
pub struct EsPerturbedPair(PerturbedPair);

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    IndexOutOfRange = 4,
    NonConvergence = 5,
    Io = 6,
    Parse = 7,
    NonPositive = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EsDkMode {
    /// `2√2 ‖E‖₂ / g_I`.
    Hs = 0,
    /// `2√2 √|I| ‖E‖_∞ / g_I`.
    Op = 1,
}

/// A bound on the squared Hilbert–Schmidt distance and its gate.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EsCertificate {
    pub bound: f64,
    pub condition: f64,
    pub threshold: f64,
    pub applicable: bool,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EsFirstOrder {
    /// Squared Hilbert–Schmidt norm of the linear term.
    pub linear_hs_sq: f64,
    /// Operator-norm bound on the remainder (`+inf` once `delta ≥ 1`).
    pub remainder_bound: f64,
    pub delta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("NUL bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> EsStatus {
    match err {
        Error::DimensionMismatch { .. } => EsStatus::DimensionMismatch,
        Error::IndexOutOfRange { .. } | Error::EmptyIndexSet => EsStatus::IndexOutOfRange,
        Error::NonConvergence { .. } => EsStatus::NonConvergence,
        Error::NonPositiveEigenvalue { .. } => EsStatus::NonPositive,
        Error::Io { .. } => EsStatus::Io,
        Error::Parse { .. } | Error::Csv { .. } | Error::Json { .. } | Error::Config(_) => EsStatus::Parse,
        _ => EsStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), (EsStatus, String)>) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(format!("panic: {message}"));
            EsStatus::Panic
        }
    }
}

fn lib<T>(r: eigenshift::error::Result<T>) -> Result<T, (EsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (EsStatus, String) {
    (EsStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `p` must be null or point to a live `T`.
unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (EsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// # Safety
/// `out` must be null or valid for a write of `T`.
unsafe fn write<T>(out: *mut T, value: T) -> Result<(), (EsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    out.write(value);
    Ok(())
}

/// # Safety
/// `set` must be null or point to `len` readable `usize` values. Empty
/// sets are rejected.
unsafe fn index_set(set: *const usize, len: usize) -> Result<IndexSet, (EsStatus, String)> {
    if set.is_null() {
        return Err(null("set"));
    }
    if len == 0 {
        return lib(Err(Error::EmptyIndexSet));
    }
    lib(IndexSet::new(std::slice::from_raw_parts(set, len).iter().copied()))
}

fn certificate(c: BoundCertificate) -> EsCertificate {
    EsCertificate {
        bound: c.bound_value,
        condition: c.condition_value,
        threshold: c.condition_threshold,
        applicable: c.applicable,
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn es_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn es_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a `p × p` symmetric matrix from row-major `data`. Entries whose
/// mirror differs by more than `1e-9` of the largest entry are rejected.
///
/// # Safety
/// `data` must point to `p * p` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_matrix_new(p: usize, data: *const f64, out: *mut *mut EsMatrix) -> EsStatus {
    guard(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = p
            .checked_mul(p)
            .ok_or((EsStatus::InvalidArgument, "p * p overflows".to_string()))?;
        let values = std::slice::from_raw_parts(data, len);
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for i in 0..p {
            for j in (i + 1)..p {
                let deviation = (values[i * p + j] - values[j * p + i]).abs();
                if deviation.is_nan() || deviation > spectral::PARSE_SYMMETRY_TOLERANCE * scale {
                    let e = Error::Asymmetric {
                        i: i + 1,
                        j: j + 1,
                        deviation,
                    };
                    return Err((EsStatus::InvalidArgument, e.to_string()));
                }
            }
        }
        let m = lib(SymMatrix::from_fn(p, |i, j| values[i * p + j]))?;
        write(out, Box::into_raw(Box::new(EsMatrix(m))))
    })
}

/// Reads a matrix file: a line holding `p`, then `p` rows of `p`
/// whitespace-separated decimals.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_matrix_from_file(path: *const c_char, out: *mut *mut EsMatrix) -> EsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (EsStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let m = lib(SymMatrix::read(path))?;
        write(out, Box::into_raw(Box::new(EsMatrix(m))))
    })
}

/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_matrix_dim(m: *const EsMatrix, out: *mut usize) -> EsStatus {
    guard(|| write(out, deref(m, "matrix")?.0.dim()))
}

/// # Safety
/// `m` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_matrix_free(m: *mut EsMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Eigendecomposition with eigenvalues in non-increasing order.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_model_decompose(m: *const EsMatrix, out: *mut *mut EsSpectralModel) -> EsStatus {
    guard(|| {
        let model = lib(spectral::decompose(&deref(m, "matrix")?.0))?;
        write(out, Box::into_raw(Box::new(EsSpectralModel(model))))
    })
}

/// Copies the eigenvalues into `buf`, which must hold at least the dimension.
///
/// # Safety
/// `model` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn es_model_eigenvalues(model: *const EsSpectralModel, buf: *mut f64, len: usize) -> EsStatus {
    guard(|| {
        let eigs = deref(model, "model")?.0.eigenvalues();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < eigs.len() {
            return Err((
                EsStatus::DimensionMismatch,
                format!("buffer holds {len} values, need {}", eigs.len()),
            ));
        }
        ptr::copy_nonoverlapping(eigs.as_ptr(), buf, eigs.len());
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_model_free(model: *mut EsSpectralModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Pairs `sigma` with `sigma_hat` (copies both).
///
/// # Safety
/// Both matrices must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_pair_new(
    sigma: *const EsMatrix,
    sigma_hat: *const EsMatrix,
    out: *mut *mut EsPerturbedPair,
) -> EsStatus {
    guard(|| {
        let a = deref(sigma, "sigma")?.0.clone();
        let b = deref(sigma_hat, "sigma_hat")?.0.clone();
        let pair = lib(PerturbedPair::new(a, b, Provenance::fixed("ffi")))?;
        write(out, Box::into_raw(Box::new(EsPerturbedPair(pair))))
    })
}

/// # Safety
/// `pair` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn es_pair_free(pair: *mut EsPerturbedPair) {
    if !pair.is_null() {
        drop(Box::from_raw(pair));
    }
}

/// `‖P̂_I − P_I‖₂²`.
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_hs_distance_sq(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        write(
            out,
            lib(spectral::hs_distance_sq(pair.model(), pair.model_hat(), &set))?,
        )
    })
}

/// Relative rank of `I` for the unperturbed spectrum.
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_relative_rank(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        write(out, lib(bounds::relative_rank(pair.eigenvalues(), &set))?)
    })
}

/// Davis–Kahan bound on `‖P̂_I − P_I‖₂` (`+inf` on a zero gap).
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_davis_kahan(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    mode: EsDkMode,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        let mode = match mode {
            EsDkMode::Hs => DkMode::Hs,
            EsDkMode::Op => DkMode::Op,
        };
        write(
            out,
            lib(bounds::davis_kahan_bound(
                pair.perturbation(),
                pair.eigenvalues(),
                &set,
                mode,
            ))?,
        )
    })
}

/// Theorem 2 certificate with the least valid `x` measured from the pair.
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_theorem2(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    out: *mut EsCertificate,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        let x = lib(bounds::coefficient_envelope(pair))?;
        write(
            out,
            certificate(lib(bounds::theorem2_bound(pair.eigenvalues(), x, &set))?),
        )
    })
}

/// Theorem 3 certificate with the minimal superset `I′` and measured block `x`.
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_theorem3(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    out: *mut EsCertificate,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        let iprime = lib(bounds::build_iprime(pair.eigenvalues(), &set))?;
        write(out, certificate(lib(bounds::theorem3_bound(pair, &set, &iprime))?))
    })
}

/// First-order term summary for `I`.
///
/// # Safety
/// `pair` must be live; `set` must hold `len` indices; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn es_first_order(
    pair: *const EsPerturbedPair,
    set: *const usize,
    len: usize,
    out: *mut EsFirstOrder,
) -> EsStatus {
    guard(|| {
        let pair = &deref(pair, "pair")?.0;
        let set = index_set(set, len)?;
        let fo = lib(bounds::first_order(pair, &set))?;
        write(
            out,
            EsFirstOrder {
                linear_hs_sq: fo.linear_hs_sq,
                remainder_bound: fo.remainder_op_bound,
                delta: fo.delta,
            },
        )
    })
}
