use std::ffi::{c_char, CString};
use std::ptr;

use robust_coreset::synth::gaussian_mixture;
use robust_coreset_ffi::*;

fn last_error() -> String {
    let n = unsafe { rc_last_error(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { rc_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn mixture(n: usize) -> (Vec<f64>, usize) {
    let (data, _) = gaussian_mixture(n, 2, 3, 10.0, 1.0, 7).unwrap();
    let feats: Vec<f64> = data.points().iter().flat_map(|p| p.features.clone()).collect();
    (feats, 2)
}

unsafe fn dataset(feats: &[f64], dim: usize) -> *mut RcDataset {
    let mut ds = ptr::null_mut();
    let st = rc_dataset_new(feats.len() / dim, dim, feats.as_ptr(), ptr::null(), ptr::null(), ptr::null(), &mut ds);
    assert_eq!(st, RcStatus::Ok);
    ds
}

unsafe fn kmeans(dim: usize) -> *mut RcModel {
    let json = CString::new(r#"{"kind":"kmeans","k":3}"#).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(rc_model_from_json(json.as_ptr(), dim, &mut m), RcStatus::Ok);
    m
}

#[test]
fn objective_and_solve_round_trip() {
    unsafe {
        let (feats, dim) = mixture(600);
        let ds = dataset(&feats, dim);
        let m = kmeans(dim);
        assert_eq!(rc_dataset_len(ds), 600);
        assert_eq!(rc_model_param_dim(m), 6);

        let mut theta = [0.0; 6];
        let mut loss = 0.0;
        assert_eq!(rc_solve(m, ds, 5.0, 1, theta.as_mut_ptr(), 6, &mut loss), RcStatus::Ok);
        let mut again = 0.0;
        assert_eq!(rc_objective(m, ds, theta.as_ptr(), 6, 5.0, &mut again), RcStatus::Ok);
        assert!((loss - again).abs() <= 1e-9 * loss);
        let mut plain = 0.0;
        assert_eq!(rc_objective(m, ds, theta.as_ptr(), 6, 0.0, &mut plain), RcStatus::Ok);
        assert!(plain >= again);

        assert_eq!(rc_solve(m, ds, 5.0, 1, theta.as_mut_ptr(), 5, ptr::null_mut()), RcStatus::BufferTooSmall);
        rc_model_free(m);
        rc_dataset_free(ds);
    }
}

#[test]
fn robust_build_copies_out() {
    unsafe {
        let (feats, dim) = mixture(2000);
        let ds = dataset(&feats, dim);
        let m = kmeans(dim);
        let opts = CString::new(r#"{"z":20,"beta":0.2,"eps":0.3,"builder":"gsp","size":40,"radius":1.0}"#).unwrap();
        let mut c = ptr::null_mut();
        assert_eq!(rc_build_robust(m, ds, opts.as_ptr(), 3, &mut c), RcStatus::Ok, "{}", last_error());
        let len = rc_coreset_len(c);
        assert!(len > 0 && len <= 2000);
        let mut ids = vec![0u64; len];
        let mut xs = vec![0.0; len * dim];
        let mut ws = vec![0.0; len];
        assert_eq!(rc_coreset_copy(c, len, dim, ids.as_mut_ptr(), xs.as_mut_ptr(), ws.as_mut_ptr()), RcStatus::Ok);
        assert!(ws.iter().all(|&w| w > 0.0));
        assert!(ids.iter().all(|&id| id < 2000));
        assert_eq!(rc_coreset_copy(c, len - 1, dim, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), RcStatus::BufferTooSmall);

        let mut cds = ptr::null_mut();
        assert_eq!(rc_coreset_to_dataset(c, &mut cds), RcStatus::Ok);
        assert_eq!(rc_dataset_len(cds), len);
        rc_dataset_free(cds);
        rc_coreset_free(c);
        rc_model_free(m);
        rc_dataset_free(ds);
    }
}

#[test]
fn dynamic_operations() {
    unsafe {
        let (feats, dim) = mixture(800);
        let ds = dataset(&feats, dim);
        let m = kmeans(dim);
        let opts = CString::new(r#"{"z":5,"beta":0.2,"builder":"uniform","size":50,"radius":1.0,"bucket_size":100}"#).unwrap();
        let mut dy = ptr::null_mut();
        assert_eq!(rc_dynamic_init(m, ds, opts.as_ptr(), 9, &mut dy), RcStatus::Ok, "{}", last_error());
        assert_eq!(rc_dynamic_len(dy), 800);

        let x = [0.5, -0.5];
        assert_eq!(rc_dynamic_insert(dy, 10_000, x.as_ptr(), 2, 1.0, false, 0), RcStatus::Ok);
        assert_eq!(rc_dynamic_insert(dy, 10_000, x.as_ptr(), 2, 1.0, false, 0), RcStatus::InvalidArgument);
        assert!(last_error().contains("10000"));
        assert_eq!(rc_dynamic_delete(dy, 3), RcStatus::Ok);
        assert_eq!(rc_dynamic_delete(dy, 3), RcStatus::InvalidArgument);
        assert_eq!(rc_dynamic_change_z(dy, 2), RcStatus::Ok);
        assert_eq!(rc_dynamic_len(dy), 800);

        let mut c = ptr::null_mut();
        assert_eq!(rc_dynamic_query(dy, &mut c), RcStatus::Ok);
        assert!(rc_coreset_len(c) > 7);
        rc_coreset_free(c);
        rc_dynamic_free(dy);
        rc_model_free(m);
        rc_dataset_free(ds);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(rc_model_from_json(ptr::null(), 2, &mut m), RcStatus::NullPointer);
        let bad = CString::new("{not json").unwrap();
        assert_eq!(rc_model_from_json(bad.as_ptr(), 2, &mut m), RcStatus::InvalidArgument);
        assert!(last_error().starts_with("bad JSON"));
        let unknown = CString::new(r#"{"kind":"nope"}"#).unwrap();
        assert_eq!(rc_model_from_json(unknown.as_ptr(), 2, &mut m), RcStatus::InvalidArgument);

        let xs = [1.0, 2.0];
        let ws = [-1.0];
        let mut ds = ptr::null_mut();
        assert_eq!(rc_dataset_new(1, 2, xs.as_ptr(), ptr::null(), ws.as_ptr(), ptr::null(), &mut ds), RcStatus::InvalidArgument);
        assert!(ds.is_null());

        // success clears the message
        let mut short = [0 as c_char; 4];
        assert!(rc_last_error(short.as_mut_ptr(), 4) > 3);
        assert_eq!(short[3], 0);
        ds = dataset(&xs, 2);
        assert_eq!(rc_last_error(ptr::null_mut(), 0), 0);

        assert_eq!(rc_dataset_len(ptr::null()), 0);
        rc_dataset_free(ptr::null_mut());
        rc_dataset_free(ds);
    }
}
