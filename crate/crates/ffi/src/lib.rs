//! C ABI for the `phaseflow` library.
//!
//! Conventions:
//! - Every fallible function returns a [`PfStatus`]; on failure a message is
//!   available from [`pf_last_error_message`] on the same thread.
//! - Objects are opaque handles created by `*_generate`, `*_load`, `*_fit`
//!   or `*_train` and released with the matching `*_free`.
//! - Output arrays are caller-allocated. Vector outputs have the model or
//!   system dimension; Jacobians are row-major `dim × dim`.
//! - Panics never cross the boundary; they surface as `PF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use phaseflow::eval::{self, DynamicsModel};
use phaseflow::systems::{self, System, Trajectory};
use phaseflow::train::{self, TrainConfig};
use phaseflow::{io, sindy, spectral, Error, MlpModel, SindyModel};

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Domain = 4,
    InsufficientData = 5,
    Config = 6,
    Parse = 7,
    Io = 8,
    Diverged = 9,
    TrainingDiverged = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(e: &Error) -> PfStatus {
    match e {
        Error::Domain(_) => PfStatus::Domain,
        Error::Shape(_) => PfStatus::Shape,
        Error::Parameter(_) => PfStatus::InvalidArgument,
        Error::InsufficientData(_) => PfStatus::InsufficientData,
        Error::Config(_) | Error::Json(_) => PfStatus::Config,
        Error::Divergence { .. } | Error::EnsembleDivergence { .. } => PfStatus::Diverged,
        Error::TrainingDiverged { .. } => PfStatus::TrainingDiverged,
        Error::Parse { .. } => PfStatus::Parse,
        Error::Io { .. } => PfStatus::Io,
    }
}

struct Fail(PfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PfStatus::Panic
        }
    }
}

fn null(name: &str) -> Fail {
    Fail(PfStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, name: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn string(p: *const c_char, name: &str) -> Result<String, Fail> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail(PfStatus::InvalidArgument, format!("{name} is not valid UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(name))
}

/// A sequence of snapshots with a fixed time step.
pub struct PfTrajectory {
    inner: Trajectory,
}

enum ModelKind {
    Mlp(MlpModel),
    Sindy(SindyModel),
}

/// A trained network or a sparse polynomial model.
pub struct PfModel {
    inner: ModelKind,
}

impl PfModel {
    fn dynamics(&self) -> &dyn DynamicsModel {
        match &self.inner {
            ModelKind::Mlp(m) => m,
            ModelKind::Sindy(m) => m,
        }
    }
}

unsafe fn traj<'a>(t: *const PfTrajectory) -> Result<&'a Trajectory, Fail> {
    t.as_ref().map(|t| &t.inner).ok_or_else(|| null("trajectory"))
}

unsafe fn model<'a>(m: *const PfModel) -> Result<&'a PfModel, Fail> {
    m.as_ref().ok_or_else(|| null("model"))
}

fn boxed_traj(t: Trajectory) -> *mut PfTrajectory {
    Box::into_raw(Box::new(PfTrajectory { inner: t }))
}

/// Message for the most recent failure on this thread, or an empty string.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Van der Pol first-order target at `x[2]`, written to `out[2]`.
///
/// # Safety
/// `x` and `out` must point to two doubles each.
#[no_mangle]
pub unsafe extern "C" fn pf_vdp_target(x: *const f64, mu: f64, out: *mut f64) -> PfStatus {
    guard(|| {
        let y = systems::vdp_target(slice(x, 2, "x")?, mu)?;
        slice_mut(out, 2, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Non-polynomial, non-rational oscillator target at `x[2]`, written to `out[2]`.
///
/// # Safety
/// `x` and `out` must point to two doubles each.
#[no_mangle]
pub unsafe extern "C" fn pf_yg_target(x: *const f64, out: *mut f64) -> PfStatus {
    guard(|| {
        let y = systems::yg_target(slice(x, 2, "x")?)?;
        slice_mut(out, 2, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Integrates a closed-form system described by JSON, e.g.
/// `{"name":"vdp","mu":2.0}`, `{"name":"yg"}` or `{"name":"mean_field"}`,
/// for `steps` forward-Euler steps. On divergence `*out` receives the
/// finite prefix when it has at least two snapshots, otherwise null.
///
/// # Safety
/// `system_json` must be a NUL-terminated string, `x0` must hold `dim`
/// doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_generate(
    system_json: *const c_char,
    x0: *const f64,
    dim: usize,
    dt: f64,
    steps: usize,
    out: *mut *mut PfTrajectory,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let sys: System = serde_json::from_str(&string(system_json, "system_json")?).map_err(Error::from)?;
        let x0 = slice(x0, dim, "x0")?;
        match systems::generate_trajectory(|x| sys.target(x), x0, dt, steps, sys.tag()) {
            Ok(t) => {
                *out = boxed_traj(t);
                Ok(())
            }
            Err(Error::Divergence { step, partial }) => {
                if let Some(p) = partial.filter(|p| p.len() >= 2) {
                    *out = boxed_traj(*p);
                }
                Err(Fail(PfStatus::Diverged, format!("diverged at step {step}")))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// Reads a trajectory CSV with its JSON sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_load(path: *const c_char, out: *mut *mut PfTrajectory) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let t = io::read_trajectory(&PathBuf::from(string(path, "path")?))?;
        *out = boxed_traj(t);
        Ok(())
    })
}

/// Writes a trajectory CSV and its JSON sidecar.
///
/// # Safety
/// `t` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_save(t: *const PfTrajectory, path: *const c_char) -> PfStatus {
    guard(|| {
        io::write_trajectory(&PathBuf::from(string(path, "path")?), traj(t)?)?;
        Ok(())
    })
}

/// Number of snapshots, state dimension and time step.
///
/// # Safety
/// `t` must be a live handle; each output pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_shape(
    t: *const PfTrajectory,
    len: *mut usize,
    dim: *mut usize,
    dt: *mut f64,
) -> PfStatus {
    guard(|| {
        let t = traj(t)?;
        if let Some(l) = len.as_mut() {
            *l = t.len();
        }
        if let Some(d) = dim.as_mut() {
            *d = t.dim();
        }
        if let Some(d) = dt.as_mut() {
            *d = t.dt();
        }
        Ok(())
    })
}

/// Copies the row-major `len × dim` states into `buf`, which holds `cap`
/// doubles.
///
/// # Safety
/// `t` must be a live handle and `buf` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_copy_states(t: *const PfTrajectory, buf: *mut f64, cap: usize) -> PfStatus {
    guard(|| {
        let s = traj(t)?.states();
        if cap < s.len() {
            return Err(Fail(
                PfStatus::BufferTooSmall,
                format!("need {} doubles, got {cap}", s.len()),
            ));
        }
        slice_mut(buf, s.len(), "buf")?.copy_from_slice(s);
        Ok(())
    })
}

/// # Safety
/// `t` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn pf_trajectory_free(t: *mut PfTrajectory) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Loads a network or SINDy model from JSON.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_model_load(path: *const c_char, out: *mut *mut PfModel) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let path = PathBuf::from(string(path, "path")?);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let inner = if text.contains("\"layer_sizes\"") {
            ModelKind::Mlp(MlpModel::load(&path)?)
        } else {
            ModelKind::Sindy(SindyModel::load(&path)?)
        };
        *out = Box::into_raw(Box::new(PfModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pf_model_save(m: *const PfModel, path: *const c_char) -> PfStatus {
    guard(|| {
        let path = PathBuf::from(string(path, "path")?);
        match &model(m)?.inner {
            ModelKind::Mlp(mm) => mm.save(&path)?,
            ModelKind::Sindy(sm) => sm.save(&path)?,
        }
        Ok(())
    })
}

/// # Safety
/// `m` must be a live handle and `dim` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_model_dim(m: *const PfModel, dim: *mut usize) -> PfStatus {
    guard(|| {
        *out_ptr(dim, "dim")? = model(m)?.dynamics().dim();
        Ok(())
    })
}

/// `out = f(x)`.
///
/// # Safety
/// `x` and `out` must each hold the model dimension in doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_model_predict(m: *const PfModel, x: *const f64, out: *mut f64) -> PfStatus {
    guard(|| {
        let f = model(m)?.dynamics();
        let y = f.predict(slice(x, f.dim(), "x")?)?;
        slice_mut(out, y.len(), "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Row-major `∂f/∂x` at `x`.
///
/// # Safety
/// `x` must hold `dim` doubles and `out` `dim*dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_model_jacobian(m: *const PfModel, x: *const f64, out: *mut f64) -> PfStatus {
    guard(|| {
        let f = model(m)?.dynamics();
        let j = f.jacobian(slice(x, f.dim(), "x")?)?;
        slice_mut(out, j.len(), "out")?.copy_from_slice(&j);
        Ok(())
    })
}

/// Rolls the model out for `steps` steps from `x0`. Divergence behaves as in
/// [`pf_trajectory_generate`].
///
/// # Safety
/// `x0` must hold the model dimension in doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_model_rollout(
    m: *const PfModel,
    x0: *const f64,
    dt: f64,
    steps: usize,
    out: *mut *mut PfTrajectory,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let f = model(m)?.dynamics();
        match eval::rollout(f, slice(x0, f.dim(), "x0")?, dt, steps, "rollout") {
            Ok(t) => {
                *out = boxed_traj(t);
                Ok(())
            }
            Err(Error::Divergence { step, partial }) => {
                if let Some(p) = partial.filter(|p| p.len() >= 2) {
                    *out = boxed_traj(*p);
                }
                Err(Fail(PfStatus::Diverged, format!("rollout diverged at step {step}")))
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// # Safety
/// `m` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn pf_model_free(m: *mut PfModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

unsafe fn gather(trajs: *const *const PfTrajectory, n: usize) -> Result<Vec<Trajectory>, Fail> {
    if n == 0 {
        return Err(Fail(PfStatus::InsufficientData, "no trajectories".into()));
    }
    if trajs.is_null() {
        return Err(null("trajs"));
    }
    std::slice::from_raw_parts(trajs, n)
        .iter()
        .map(|&t| traj(t).cloned())
        .collect()
}

/// Trains a network on the forward-difference pairs of `n` trajectories.
/// `config_json` holds the training configuration, e.g.
/// `{"layer_sizes":[2,8,8,2],"activation":{"kind":"swish"},"epochs":500}`.
///
/// # Safety
/// `trajs` must point to `n` live handles, `config_json` must be a
/// NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pf_model_train(
    trajs: *const *const PfTrajectory,
    n: usize,
    config_json: *const c_char,
    out: *mut *mut PfModel,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let cfg: TrainConfig = serde_json::from_str(&string(config_json, "config_json")?).map_err(Error::from)?;
        let data = train::assemble_multi_trajectory(&gather(trajs, n)?)?;
        let outcome = train::train(&data, &cfg)?;
        *out = Box::into_raw(Box::new(PfModel {
            inner: ModelKind::Mlp(outcome.model),
        }));
        Ok(())
    })
}

/// Fits a sparse polynomial model to the forward-difference pairs of `n`
/// trajectories.
///
/// # Safety
/// `trajs` must point to `n` live handles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_sindy_fit(
    trajs: *const *const PfTrajectory,
    n: usize,
    order: usize,
    threshold: f64,
    out: *mut *mut PfModel,
) -> PfStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = std::ptr::null_mut();
        let data = train::assemble_multi_trajectory(&gather(trajs, n)?)?;
        let (m, _) = sindy::fit(&data.features, &data.targets, data.dim, order, threshold, 10)?;
        *out = Box::into_raw(Box::new(PfModel {
            inner: ModelKind::Sindy(m),
        }));
        Ok(())
    })
}

/// Leading `n_modes` orthonormal DCT-II coefficients of `u[n]`.
///
/// # Safety
/// `u` must hold `n` doubles and `out` `n_modes` doubles.
#[no_mangle]
pub unsafe extern "C" fn pf_dct_reduce(u: *const f64, n: usize, n_modes: usize, out: *mut f64) -> PfStatus {
    guard(|| {
        let a = spectral::dct_reduce(slice(u, n, "u")?, n_modes)?;
        slice_mut(out, a.len(), "out")?.copy_from_slice(&a);
        Ok(())
    })
}

/// Coefficient of determination averaged over components.
///
/// # Safety
/// `y` and `p` must each hold `rows*dim` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pf_r2_score(
    y: *const f64,
    p: *const f64,
    rows: usize,
    dim: usize,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        let r = eval::r2_score(slice(y, rows * dim, "y")?, slice(p, rows * dim, "p")?, dim)?;
        *out_ptr(out, "out")? = r.mean;
        Ok(())
    })
}
