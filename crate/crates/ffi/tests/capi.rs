use std::ffi::{CStr, CString};
use std::ptr;

use eigenshift_ffi::*;

fn matrix(p: usize, data: &[f64]) -> *mut EsMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { es_matrix_new(p, data.as_ptr(), &mut m) }, EsStatus::Ok);
    m
}

fn running_pair(eps: f64) -> (*mut EsMatrix, *mut EsMatrix, *mut EsPerturbedPair) {
    let a = matrix(2, &[2.0, 0.0, 0.0, 1.0]);
    let b = matrix(2, &[2.0, eps, eps, 1.0]);
    let mut pair = ptr::null_mut();
    assert_eq!(unsafe { es_pair_new(a, b, &mut pair) }, EsStatus::Ok);
    (a, b, pair)
}

fn free(a: *mut EsMatrix, b: *mut EsMatrix, pair: *mut EsPerturbedPair) {
    unsafe {
        es_pair_free(pair);
        es_matrix_free(a);
        es_matrix_free(b);
    }
}

#[test]
fn running_example_through_the_c_abi() {
    let (a, b, pair) = running_pair(0.1);
    let set = [1usize];
    let mut dk = 0.0;
    assert_eq!(
        unsafe { es_davis_kahan(pair, set.as_ptr(), 1, EsDkMode::Hs, &mut dk) },
        EsStatus::Ok
    );
    assert!((dk - 0.4).abs() < 1e-12);
    let mut rank = 0.0;
    assert_eq!(
        unsafe { es_relative_rank(pair, set.as_ptr(), 1, &mut rank) },
        EsStatus::Ok
    );
    assert!((rank - 3.0).abs() < 1e-12);
    let mut cert = EsCertificate::default();
    assert_eq!(unsafe { es_theorem2(pair, set.as_ptr(), 1, &mut cert) }, EsStatus::Ok);
    assert!(!cert.applicable);
    assert!((cert.condition - 0.212132034355964).abs() < 1e-12);
    let mut fo = EsFirstOrder::default();
    assert_eq!(unsafe { es_first_order(pair, set.as_ptr(), 1, &mut fo) }, EsStatus::Ok);
    assert!((fo.linear_hs_sq - 0.02).abs() < 1e-12);
    assert!((fo.delta - 0.2).abs() < 1e-12);
    let mut d = 0.0;
    assert_eq!(
        unsafe { es_hs_distance_sq(pair, set.as_ptr(), 1, &mut d) },
        EsStatus::Ok
    );
    assert!(d > 0.0 && d <= dk * dk);
    free(a, b, pair);
}

#[test]
fn theorem3_certificate_is_four_times_theorem2_on_top_sets() {
    let (a, b, pair) = running_pair(0.01);
    let set = [1usize];
    let (mut c2, mut c3) = (EsCertificate::default(), EsCertificate::default());
    assert_eq!(unsafe { es_theorem2(pair, set.as_ptr(), 1, &mut c2) }, EsStatus::Ok);
    assert_eq!(unsafe { es_theorem3(pair, set.as_ptr(), 1, &mut c3) }, EsStatus::Ok);
    assert!(c2.applicable && c3.applicable);
    assert_eq!(c3.bound, 4.0 * c2.bound);
    free(a, b, pair);
}

#[test]
fn decomposition_and_eigenvalues() {
    let m = matrix(3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
    let mut dim = 0;
    assert_eq!(unsafe { es_matrix_dim(m, &mut dim) }, EsStatus::Ok);
    assert_eq!(dim, 3);
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { es_model_decompose(m, &mut model) }, EsStatus::Ok);
    let mut eigs = [0.0; 3];
    assert_eq!(
        unsafe { es_model_eigenvalues(model, eigs.as_mut_ptr(), 3) },
        EsStatus::Ok
    );
    for (got, want) in eigs.iter().zip([5.0, 3.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert_eq!(
        unsafe { es_model_eigenvalues(model, eigs.as_mut_ptr(), 2) },
        EsStatus::DimensionMismatch
    );
    unsafe {
        es_model_free(model);
        es_matrix_free(m);
    }
}

#[test]
fn errors_are_reported_not_raised() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { es_matrix_new(2, ptr::null(), &mut m) }, EsStatus::NullPointer);
    assert!(m.is_null());
    let asym = [1.0, 2.0, 0.0, 1.0];
    assert_eq!(
        unsafe { es_matrix_new(2, asym.as_ptr(), &mut m) },
        EsStatus::InvalidArgument
    );
    let msg = unsafe { CStr::from_ptr(es_last_error_message()) }.to_str().unwrap();
    assert!(msg.contains("not symmetric"), "{msg}");

    let (a, b, pair) = running_pair(0.1);
    let mut d = 0.0;
    let bad = [3usize];
    assert_eq!(
        unsafe { es_hs_distance_sq(pair, bad.as_ptr(), 1, &mut d) },
        EsStatus::IndexOutOfRange
    );
    assert_eq!(
        unsafe { es_hs_distance_sq(ptr::null(), bad.as_ptr(), 1, &mut d) },
        EsStatus::NullPointer
    );
    assert_eq!(
        unsafe { es_hs_distance_sq(pair, bad.as_ptr(), 0, &mut d) },
        EsStatus::IndexOutOfRange
    );

    let missing = CString::new("/nonexistent/matrix.txt").unwrap();
    assert_eq!(unsafe { es_matrix_from_file(missing.as_ptr(), &mut m) }, EsStatus::Io);
    free(a, b, pair);
    unsafe { es_matrix_free(ptr::null_mut()) };
}

#[test]
fn reads_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.txt");
    std::fs::write(&path, "2\n2 0.5\n0.5 1\n").unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { es_matrix_from_file(c.as_ptr(), &mut m) }, EsStatus::Ok);
    let mut dim = 0;
    assert_eq!(unsafe { es_matrix_dim(m, &mut dim) }, EsStatus::Ok);
    assert_eq!(dim, 2);
    unsafe { es_matrix_free(m) };
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(es_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/eigenshift.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "es_matrix_new",
        "es_theorem3",
        "ES_STATUS_PANIC",
        "typedef struct EsPerturbedPair EsPerturbedPair",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    // Compile-check when a C compiler is present.
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        return;
    };
    assert!(status.success());
}
