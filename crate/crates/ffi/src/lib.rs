//! C interface to mango.
//!
//! Every function returns a [`MangoStatus`]. On failure the message is kept
//! per thread and can be read with [`mango_last_error`]. Arrays are row-major
//! `double` buffers; the caller owns all memory except [`MangoModel`], which
//! is created by [`mango_model_load`] and released by [`mango_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use mango::bench::Task;
use mango::checkpoint::Checkpoint;
use mango::guidance::{self, GuidanceConfig};
use mango::pareto;
use mango::scorenet::ScoreNetwork;
use mango::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MangoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A loaded checkpoint.
pub struct MangoModel {
    ck: Checkpoint,
    net: ScoreNetwork,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MangoStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Io { .. } | Error::Schema { .. } | Error::Json(_) | Error::Csv(_) => MangoStatus::Io,
            Error::NonFinite(_)
            | Error::VanishingSignal(_)
            | Error::DegenerateTime
            | Error::Divergence { .. } => MangoStatus::Numeric,
            _ => MangoStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MangoStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MangoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MangoStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MangoStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(MangoStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure(MangoStatus::NullPointer, format!("{what} is null")));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(MangoStatus::NullPointer, format!("{what} is null")))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MangoStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn model<'a>(m: *const MangoModel) -> Result<&'a MangoModel, Failure> {
    m.as_ref()
        .ok_or_else(|| Failure(MangoStatus::NullPointer, "model is null".into()))
}

fn rows(flat: &[f64], n: usize, width: usize) -> Vec<Vec<f64>> {
    if width == 0 {
        return vec![Vec::new(); n];
    }
    flat.chunks(width).map(<[f64]>::to_vec).collect()
}

fn checked_len(n: usize, width: usize) -> Result<usize, Failure> {
    n.checked_mul(width).ok_or_else(|| invalid("array size overflows"))
}

fn task(id: &str) -> Result<Task, Failure> {
    id.parse::<Task>().map_err(|e: Error| invalid(e.to_string()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mango_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, or 0 when
/// there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mango_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Loads a checkpoint. On success `*out` owns a model that must be released
/// with [`mango_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mango_model_load(path: *const c_char, out: *mut *mut MangoModel) -> MangoStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let path = string(path, "path")?;
        let (ck, _) = Checkpoint::load(Path::new(path))?;
        let net = ck.network()?;
        *out = Box::into_raw(Box::new(MangoModel { ck, net }));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from [`mango_model_load`] and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn mango_model_free(model: *mut MangoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Design and score dimensions of a model.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mango_model_dims(model: *const MangoModel, d: *mut usize, m: *mut usize) -> MangoStatus {
    guard(|| {
        let mdl = self::model(model)?;
        *out_ref(d, "d")? = mdl.ck.d();
        *out_ref(m, "m")? = mdl.ck.m();
        Ok(())
    })
}

fn task_box(ck: &Checkpoint) -> Vec<(f64, f64)> {
    let (lo, hi): (Vec<f64>, Vec<f64>) = ck.task.bounds.iter().copied().unzip();
    let design = &ck.normalizer.design;
    design.normalize(&lo).into_iter().zip(design.normalize(&hi)).collect()
}

/// Draws `k` guided samples. With `alpha_x > 0` designs are pulled into the
/// task bounds. `y_pref` holds `n_pref` preferred score vectors
/// in task units (ignored when `alpha_y` is 0); chain `i` targets row
/// `i % n_pref`. `out` receives `k` rows of `d + m` values in task units.
/// Rows of chains that went non-finite are filled with NaN.
///
/// # Safety
/// `y_pref` must hold `n_pref * m` values and `out` have room for `out_len`.
#[no_mangle]
pub unsafe extern "C" fn mango_model_sample(
    model: *const MangoModel,
    k: usize,
    y_pref: *const f64,
    n_pref: usize,
    alpha_x: f64,
    alpha_y: f64,
    steps: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> MangoStatus {
    guard(|| {
        let mdl = self::model(model)?;
        let (d, m) = (mdl.ck.d(), mdl.ck.m());
        let needed = checked_len(k, d + m)?;
        if out_len < needed {
            return Err(Failure(
                MangoStatus::BufferTooSmall,
                format!("output needs {needed} values, got {out_len}"),
            ));
        }
        let targets = rows(input(y_pref, checked_len(n_pref, m)?, "y_pref")?, n_pref, m);
        let cfg = GuidanceConfig {
            y_pref: mdl.ck.normalize_targets(&targets)?,
            design_box: (alpha_x > 0.0).then(|| task_box(&mdl.ck)),
            alpha_x,
            alpha_y,
            steps,
            seed,
        };
        let res = guidance::sample(&mdl.net, &mdl.ck.schedule, d, &cfg, k, false)?;
        let dst = output(out, needed, "out")?;
        for (row, g) in dst.chunks_mut(d + m).zip(&res.samples) {
            if g.flagged {
                row.fill(f64::NAN);
            } else {
                row.copy_from_slice(&mdl.ck.to_task_units(&g.state));
            }
        }
        Ok(())
    })
}

/// Predicts the scores of one design (task units, inside the task bounds).
/// `*converged` is set to 0 when the design block drifted beyond tolerance.
///
/// # Safety
/// `design` must hold `d` values and `score` have room for `m`.
#[no_mangle]
pub unsafe extern "C" fn mango_model_predict(
    model: *const MangoModel,
    design: *const f64,
    d: usize,
    alpha_x: f64,
    steps: usize,
    seed: u64,
    score: *mut f64,
    m: usize,
    converged: *mut i32,
) -> MangoStatus {
    guard(|| {
        let mdl = self::model(model)?;
        if d != mdl.ck.d() || m != mdl.ck.m() {
            return Err(invalid(format!(
                "model has d={}, m={}; got d={d}, m={m}",
                mdl.ck.d(),
                mdl.ck.m()
            )));
        }
        let x = input(design, d, "design")?;
        let cfg = GuidanceConfig {
            alpha_x,
            ..GuidanceConfig::unconditional(steps, seed)
        };
        let p = mdl.ck.predict(&mdl.net, x, &cfg)?;
        output(score, m, "score")?.copy_from_slice(&p.score);
        if !converged.is_null() {
            *converged = i32::from(p.converged);
        }
        Ok(())
    })
}

/// Dimensions of a benchmark task.
///
/// # Safety
/// `task_id` must be a NUL-terminated string; `d` and `m` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn mango_task_dims(task_id: *const c_char, d: *mut usize, m: *mut usize) -> MangoStatus {
    guard(|| {
        let (td, tm) = task(string(task_id, "task_id")?)?.dims();
        *out_ref(d, "d")? = td;
        *out_ref(m, "m")? = tm;
        Ok(())
    })
}

/// Evaluates `n` designs of a benchmark task, writing `n * m` scores.
///
/// # Safety
/// `x` must hold `n * d` values and `y` have room for `n * m`.
#[no_mangle]
pub unsafe extern "C" fn mango_task_eval(
    task_id: *const c_char,
    x: *const f64,
    n: usize,
    y: *mut f64,
) -> MangoStatus {
    guard(|| {
        let t = task(string(task_id, "task_id")?)?;
        let (d, m) = t.dims();
        let xs = input(x, checked_len(n, d)?, "x")?;
        let ys = output(y, checked_len(n, m)?, "y")?;
        for (xi, yi) in xs.chunks(d).zip(ys.chunks_mut(m)) {
            yi.copy_from_slice(&t.evaluate(xi)?);
        }
        Ok(())
    })
}

/// Sets `*result` to 1 when `a` Pareto-dominates `b` (minimization).
///
/// # Safety
/// `a` and `b` must hold `m` values.
#[no_mangle]
pub unsafe extern "C" fn mango_dominates(a: *const f64, b: *const f64, m: usize, result: *mut i32) -> MangoStatus {
    guard(|| {
        let r = pareto::dominates(input(a, m, "a")?, input(b, m, "b")?)?;
        *out_ref(result, "result")? = i32::from(r);
        Ok(())
    })
}

/// Hypervolume dominated by `n` points with respect to `reference`.
/// Exact for one or two objectives, a seeded Monte Carlo estimate otherwise.
///
/// # Safety
/// `points` must hold `n * m` values and `reference` `m`.
#[no_mangle]
pub unsafe extern "C" fn mango_hypervolume(
    points: *const f64,
    n: usize,
    m: usize,
    reference: *const f64,
    seed: u64,
    result: *mut f64,
) -> MangoStatus {
    guard(|| {
        let pts = rows(input(points, checked_len(n, m)?, "points")?, n, m);
        let hv = pareto::hypervolume(&pts, input(reference, m, "reference")?, seed)?;
        *out_ref(result, "result")? = hv.value;
        Ok(())
    })
}

/// Inverted generational distance of `n` candidates to `n_ref` reference
/// points.
///
/// # Safety
/// `candidates` must hold `n * m` values and `reference` `n_ref * m`.
#[no_mangle]
pub unsafe extern "C" fn mango_igd(
    candidates: *const f64,
    n: usize,
    reference: *const f64,
    n_ref: usize,
    m: usize,
    result: *mut f64,
) -> MangoStatus {
    guard(|| {
        let c = rows(input(candidates, checked_len(n, m)?, "candidates")?, n, m);
        let r = rows(input(reference, checked_len(n_ref, m)?, "reference")?, n_ref, m);
        *out_ref(result, "result")? = pareto::igd(&c, &r)?;
        Ok(())
    })
}
