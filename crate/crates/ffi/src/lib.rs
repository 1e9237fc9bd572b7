//! C ABI over `robust-coreset`.
//!
//! Every object crosses the boundary as an opaque handle owned by the caller and released with
//! its `*_free` function. Fallible calls return an `RcStatus` code; the message of the most
//! recent failure on the calling thread is available from [`rc_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use robust_coreset::builders::{BlackBox, BuilderKind, SizeRule};
use robust_coreset::data::{ParamBall, TrimSpec, WeightedDataset, WeightedPoint};
use robust_coreset::dynamic::{DynamicConfig, DynamicRobustCoreset};
use robust_coreset::error::CoresetError;
use robust_coreset::loss::{LossModel, ModelDescriptor};
use robust_coreset::objective::{objective, trimmed_objective};
use robust_coreset::robust::{build_robust, RobustParams};
use robust_coreset::solvers::{pilot_ball, pilot_theta, solve_auto, DEFAULT_MAX_ROUNDS};
use serde::Deserialize;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RcStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad input data or configuration.
    InvalidArgument = 2,
    /// The numerical machinery failed (no convergence, degenerate sample, ...).
    Numerical = 3,
    /// An output buffer is shorter than required.
    BufferTooSmall = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
}

/// Weighted point set.
pub struct RcDataset(WeightedDataset);

/// Loss instantiation bound to a data dimension.
pub struct RcModel(LossModel);

/// Weighted summary produced by a build or a dynamic query.
pub struct RcCoreset(Vec<WeightedPoint>);

/// Fully dynamic robust coreset.
pub struct RcDynamic(DynamicRobustCoreset);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| {
        let mut v = msg.into_bytes();
        v.retain(|&b| b != 0);
        *e.borrow_mut() = v;
    });
}

fn fail(status: RcStatus, msg: impl Into<String>) -> RcStatus {
    set_error(msg.into());
    status
}

fn from_core(e: CoresetError) -> RcStatus {
    let status = if e.is_numerical() { RcStatus::Numerical } else { RcStatus::InvalidArgument };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> RcStatus) -> RcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == RcStatus::Ok {
                LAST_ERROR.with(|e| e.borrow_mut().clear());
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(RcStatus::Panic, msg)
        }
    }
}

macro_rules! try_core {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(e) => return from_core(e),
        }
    };
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(RcStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

unsafe fn slice<'a, T>(p: *const T, len: usize) -> &'a [T] {
    if len == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(p, len)
    }
}

unsafe fn json_arg<T: for<'de> Deserialize<'de>>(s: *const c_char) -> Result<T, RcStatus> {
    let text = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(RcStatus::InvalidArgument, "JSON argument is not valid UTF-8"))?;
    serde_json::from_str(text).map_err(|e| fail(RcStatus::InvalidArgument, format!("bad JSON: {e}")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated, truncated to
/// `len`) and returns the full message length without the terminator. Pass a null `buf` to
/// query the length.
///
/// # Safety
/// `buf` is null or points to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn rc_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ---------------------------------------------------------------- datasets

/// Builds a dataset of `n` points in `dim` dimensions from row-major `features`.
/// `ids`, `weights` and `labels` may be null, meaning ids `0..n`, unit weights and no labels.
///
/// # Safety
/// Non-null arrays hold `n` (or `n·dim` for `features`) readable elements; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_new(
    n: usize,
    dim: usize,
    features: *const f64,
    ids: *const u64,
    weights: *const f64,
    labels: *const i8,
    out: *mut *mut RcDataset,
) -> RcStatus {
    guard(|| {
        non_null!(features, out);
        let Some(total) = n.checked_mul(dim) else {
            return fail(RcStatus::InvalidArgument, "n·dim overflows");
        };
        let f = slice(features, total);
        let ids = (!ids.is_null()).then(|| slice(ids, n));
        let weights = (!weights.is_null()).then(|| slice(weights, n));
        let labels = (!labels.is_null()).then(|| slice(labels, n));
        let pts = (0..n)
            .map(|i| {
                let id = ids.map_or(i as u64, |v| v[i]);
                let x = f[i * dim..(i + 1) * dim].to_vec();
                let w = weights.map_or(1.0, |v| v[i]);
                match labels {
                    Some(l) => WeightedPoint::labeled(id, x, l[i], w),
                    None => WeightedPoint::new(id, x, w),
                }
            })
            .collect();
        let ds = try_core!(WeightedDataset::new(pts));
        *out = Box::into_raw(Box::new(RcDataset(ds)));
        RcStatus::Ok
    })
}

/// Number of points, or 0 for a null handle.
///
/// # Safety
/// `ds` is null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_len(ds: *const RcDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `ds` is null or a dataset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_dataset_free(ds: *mut RcDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ---------------------------------------------------------------- models

/// Parses a model descriptor such as `{"kind":"kmeans","k":3}` for data of dimension `dim`.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_model_from_json(json: *const c_char, dim: usize, out: *mut *mut RcModel) -> RcStatus {
    guard(|| {
        non_null!(json, out);
        let desc: ModelDescriptor = match json_arg(json) {
            Ok(d) => d,
            Err(s) => return s,
        };
        let model = try_core!(LossModel::from_descriptor(&desc, dim));
        *out = Box::into_raw(Box::new(RcModel(model)));
        RcStatus::Ok
    })
}

/// Length of the parameter vector θ, or 0 for a null handle.
///
/// # Safety
/// `model` is null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn rc_model_param_dim(model: *const RcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.param_dim())
}

/// # Safety
/// `model` is null or a model handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_model_free(model: *mut RcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Weighted objective at θ, trimmed by weight `z` (`z = 0` gives the plain objective).
///
/// # Safety
/// Handles are live; `theta` holds `theta_len` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_objective(
    model: *const RcModel,
    ds: *const RcDataset,
    theta: *const f64,
    theta_len: usize,
    z: f64,
    out: *mut f64,
) -> RcStatus {
    guard(|| {
        non_null!(model, ds, theta, out);
        let (m, d) = (&(*model).0, &(*ds).0);
        let t = slice(theta, theta_len);
        *out = if z == 0.0 {
            try_core!(objective(m, t, d))
        } else {
            try_core!(trimmed_objective(m, t, d, try_core!(TrimSpec::new(z))))
        };
        RcStatus::Ok
    })
}

/// Runs the trimmed solver (local-search seeding for clustering models) and writes θ* and its
/// trimmed loss.
///
/// # Safety
/// Handles are live; `theta_out` holds `theta_len` writable values; `loss_out` is null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rc_solve(
    model: *const RcModel,
    ds: *const RcDataset,
    z: f64,
    seed: u64,
    theta_out: *mut f64,
    theta_len: usize,
    loss_out: *mut f64,
) -> RcStatus {
    guard(|| {
        non_null!(model, ds, theta_out);
        let m = &(*model).0;
        if theta_len < m.param_dim() {
            return fail(RcStatus::BufferTooSmall, format!("theta needs {} values", m.param_dim()));
        }
        let rep = try_core!(solve_auto(m, &(*ds).0, z, None, seed, DEFAULT_MAX_ROUNDS));
        ptr::copy_nonoverlapping(rep.theta_star.as_ptr(), theta_out, rep.theta_star.len());
        if !loss_out.is_null() {
            *loss_out = rep.trimmed_loss;
        }
        RcStatus::Ok
    })
}

// ---------------------------------------------------------------- robust builds

fn default_eps() -> f64 {
    0.3
}
fn default_pilot_frac() -> f64 {
    0.01
}
fn default_drift_factor() -> f64 {
    2.0
}
fn default_builder() -> BuilderKind {
    BuilderKind::Uniform
}
fn default_size() -> usize {
    200
}
fn default_bucket() -> usize {
    1000
}

/// JSON options shared by static and dynamic builds.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BuildOptions {
    z: f64,
    #[serde(default)]
    beta: f64,
    #[serde(default = "default_eps")]
    eps: f64,
    #[serde(default)]
    eps0: Option<f64>,
    #[serde(default)]
    so_size: Option<usize>,
    #[serde(default = "default_builder")]
    builder: BuilderKind,
    /// Black-box sample size (per layer for GSP).
    #[serde(default = "default_size")]
    size: usize,
    #[serde(default = "default_pilot_frac")]
    pilot_frac: f64,
    #[serde(default)]
    radius: Option<f64>,
    #[serde(default = "default_drift_factor")]
    drift_factor: f64,
    #[serde(default = "default_bucket")]
    bucket_size: usize,
    #[serde(default)]
    capacity: Option<usize>,
}

impl BuildOptions {
    fn params(&self) -> RobustParams {
        RobustParams {
            eps0_override: self.eps0,
            so_size_override: self.so_size,
            ..RobustParams::new(self.z, self.beta, self.eps)
        }
    }

    fn blackbox(&self) -> BlackBox {
        BlackBox::new(self.builder, SizeRule::Fixed { m: self.size })
    }

    fn ball(&self, model: &LossModel, data: &WeightedDataset, seed: u64) -> robust_coreset::error::Result<ParamBall> {
        let pilot = pilot_theta(model, data, self.pilot_frac, seed)?;
        pilot_ball(model, data, &pilot, self.radius, self.drift_factor)
    }
}

/// Builds a robust coreset. `options` is a JSON object with `z` (required) and optionally
/// `beta`, `eps`, `eps0`, `so_size`, `builder`, `size`, `pilot_frac`, `radius`, `drift_factor`.
///
/// # Safety
/// Handles are live; `options` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_build_robust(
    model: *const RcModel,
    ds: *const RcDataset,
    options: *const c_char,
    seed: u64,
    out: *mut *mut RcCoreset,
) -> RcStatus {
    guard(|| {
        non_null!(model, ds, options, out);
        let opts: BuildOptions = match json_arg(options) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let (m, d) = (&(*model).0, &(*ds).0);
        let ball = try_core!(opts.ball(m, d, seed));
        let c = try_core!(build_robust(m, d, &ball, &opts.params(), &opts.blackbox(), seed));
        *out = Box::into_raw(Box::new(RcCoreset(c.points())));
        RcStatus::Ok
    })
}

/// Number of coreset points, or 0 for a null handle.
///
/// # Safety
/// `c` is null or a live coreset handle.
#[no_mangle]
pub unsafe extern "C" fn rc_coreset_len(c: *const RcCoreset) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Copies the coreset into caller buffers of `len` points: ids, row-major features
/// (`len·dim`) and weights. Any output pointer may be null to skip it.
///
/// # Safety
/// `c` is live; non-null outputs have room for the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn rc_coreset_copy(
    c: *const RcCoreset,
    len: usize,
    dim: usize,
    ids: *mut u64,
    features: *mut f64,
    weights: *mut f64,
) -> RcStatus {
    guard(|| {
        non_null!(c);
        let pts = &(*c).0;
        if len < pts.len() {
            return fail(RcStatus::BufferTooSmall, format!("coreset has {} points", pts.len()));
        }
        if let Some(p) = pts.first() {
            if p.features.len() != dim {
                return fail(RcStatus::InvalidArgument, format!("coreset dimension is {}", p.features.len()));
            }
        }
        for (i, p) in pts.iter().enumerate() {
            if !ids.is_null() {
                *ids.add(i) = p.id;
            }
            if !features.is_null() {
                ptr::copy_nonoverlapping(p.features.as_ptr(), features.add(i * dim), dim);
            }
            if !weights.is_null() {
                *weights.add(i) = p.weight;
            }
        }
        RcStatus::Ok
    })
}

/// Converts a coreset into a dataset so it can be solved or evaluated.
///
/// # Safety
/// `c` is live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_coreset_to_dataset(c: *const RcCoreset, out: *mut *mut RcDataset) -> RcStatus {
    guard(|| {
        non_null!(c, out);
        let ds = try_core!(WeightedDataset::new((*c).0.clone()));
        *out = Box::into_raw(Box::new(RcDataset(ds)));
        RcStatus::Ok
    })
}

/// # Safety
/// `c` is null or a coreset handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_coreset_free(c: *mut RcCoreset) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

// ---------------------------------------------------------------- dynamic

/// Starts a dynamic robust coreset over `ds`. Takes the same options as [`rc_build_robust`]
/// plus `bucket_size` and `capacity`.
///
/// # Safety
/// Handles are live; `options` is NUL-terminated; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_init(
    model: *const RcModel,
    ds: *const RcDataset,
    options: *const c_char,
    seed: u64,
    out: *mut *mut RcDynamic,
) -> RcStatus {
    guard(|| {
        non_null!(model, ds, options, out);
        let opts: BuildOptions = match json_arg(options) {
            Ok(o) => o,
            Err(s) => return s,
        };
        let (m, d) = (&(*model).0, &(*ds).0);
        let ball = try_core!(opts.ball(m, d, seed));
        let config = DynamicConfig {
            params: opts.params(),
            blackbox: opts.blackbox(),
            bucket_size: opts.bucket_size,
            capacity: opts.capacity,
            seed,
        };
        let dy = try_core!(DynamicRobustCoreset::init(*m, d, ball, config));
        *out = Box::into_raw(Box::new(RcDynamic(dy)));
        RcStatus::Ok
    })
}

/// Inserts a point; `label` is ignored unless `has_label` is true.
///
/// # Safety
/// `dy` is live; `features` holds `dim` values.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_insert(
    dy: *mut RcDynamic,
    id: u64,
    features: *const f64,
    dim: usize,
    weight: f64,
    has_label: bool,
    label: i8,
) -> RcStatus {
    guard(|| {
        non_null!(dy, features);
        let x = slice(features, dim).to_vec();
        let p = if has_label { WeightedPoint::labeled(id, x, label, weight) } else { WeightedPoint::new(id, x, weight) };
        try_core!((*dy).0.insert(p));
        RcStatus::Ok
    })
}

/// # Safety
/// `dy` is live.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_delete(dy: *mut RcDynamic, id: u64) -> RcStatus {
    guard(|| {
        non_null!(dy);
        try_core!((*dy).0.delete(id));
        RcStatus::Ok
    })
}

/// Changes the outlier count by `dz`.
///
/// # Safety
/// `dy` is live.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_change_z(dy: *mut RcDynamic, dz: i64) -> RcStatus {
    guard(|| {
        non_null!(dy);
        try_core!((*dy).0.change_z(dz));
        RcStatus::Ok
    })
}

/// Current robust coreset of the live point set.
///
/// # Safety
/// `dy` is live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_query(dy: *const RcDynamic, out: *mut *mut RcCoreset) -> RcStatus {
    guard(|| {
        non_null!(dy, out);
        let c = try_core!((*dy).0.query());
        *out = Box::into_raw(Box::new(RcCoreset(c.points())));
        RcStatus::Ok
    })
}

/// Number of live points, or 0 for a null handle.
///
/// # Safety
/// `dy` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_len(dy: *const RcDynamic) -> usize {
    dy.as_ref().map_or(0, |d| d.0.len())
}

/// # Safety
/// `dy` is null or a dynamic handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rc_dynamic_free(dy: *mut RcDynamic) {
    if !dy.is_null() {
        drop(Box::from_raw(dy));
    }
}
