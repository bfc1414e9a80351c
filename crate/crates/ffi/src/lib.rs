//! C interface to `fmscale`.
//!
//! Every function returns an [`FmsStatus`]; on failure the message is
//! available from [`fms_last_error_message`] on the calling thread. Arrays are
//! caller-allocated, row-major, and sized as documented per function. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use fmscale::fields::{AnalyticField, VectorField};
use fmscale::integrators::{sample_terminals, score_orth_project, Bandwidth, Method, ParticleBatch, StepperConfig};
use fmscale::search::{noise_search, random_search, verifier_logdensity, SearchBudget};
use fmscale::{Error, GaussianMixtureTarget, RngStream, State};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    TimeRange = 4,
    Singularity = 5,
    Numeric = 6,
    Search = 7,
    Panic = 99,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FmsMethod {
    Ode = 0,
    Sde = 1,
    EdmSde = 2,
    ScoreSde = 3,
    ScoreOrthOde = 4,
    DmfmOde = 5,
}

impl From<FmsMethod> for Method {
    fn from(m: FmsMethod) -> Self {
        match m {
            FmsMethod::Ode => Method::Ode,
            FmsMethod::Sde => Method::Sde,
            FmsMethod::EdmSde => Method::EdmSde,
            FmsMethod::ScoreSde => Method::ScoreSde,
            FmsMethod::ScoreOrthOde => Method::ScoreOrthOde,
            FmsMethod::DmfmOde => Method::DmfmOde,
        }
    }
}

/// Stepper settings. EDM uses a constant beta profile and Score-SDE the
/// decaying profile `1 - t`, both scaled by `noise_scale`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FmsStepperConfig {
    pub method: FmsMethod,
    pub n_steps: usize,
    pub noise_scale: f64,
    pub eta: f64,
    pub alpha_start: f64,
    pub alpha_end: f64,
    /// Fixed RBF bandwidth; zero or negative selects the median heuristic.
    pub kernel_bandwidth: f64,
}

impl From<&FmsStepperConfig> for StepperConfig {
    fn from(c: &FmsStepperConfig) -> Self {
        let mut s = StepperConfig::new(c.method.into(), c.n_steps);
        s.noise_scale = c.noise_scale;
        s.eta = c.eta;
        s.alpha_envelope = (c.alpha_start, c.alpha_end);
        s.kernel_bandwidth = if c.kernel_bandwidth > 0.0 { Bandwidth::Fixed(c.kernel_bandwidth) } else { Bandwidth::Median };
        s
    }
}

/// Opaque Gaussian-mixture target.
pub struct FmsTarget {
    field: AnalyticField,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FmsStatus {
    match e {
        Error::DimensionMismatch { .. } => FmsStatus::Dimension,
        Error::TimeOutOfRange { .. } | Error::OffGrid { .. } => FmsStatus::TimeRange,
        Error::Singularity { .. } => FmsStatus::Singularity,
        Error::NonFinite(_) => FmsStatus::Numeric,
        Error::NoFiniteCandidates | Error::BudgetTooSmall(_) => FmsStatus::Search,
        Error::InvalidArgument(_) | Error::NonMonotoneSnr { .. } | Error::NotBracketed { .. } => FmsStatus::InvalidArgument,
    }
}

struct Fail(FmsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FmsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FmsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FmsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            FmsStatus::Panic
        }
    }
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` readable values at `p`.
    Ok(unsafe { slice::from_raw_parts(p, len) })
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` writable values at `p`.
    Ok(unsafe { slice::from_raw_parts_mut(p, len) })
}

unsafe fn target_ref<'a>(t: *const FmsTarget) -> Result<&'a FmsTarget, Fail> {
    // SAFETY: non-null handles come from `fms_target_new` and are live.
    unsafe { t.as_ref() }.ok_or_else(|| null("target"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fms_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Defaults for `method` at its reference noise scale.
#[no_mangle]
pub extern "C" fn fms_stepper_default(method: FmsMethod, n_steps: usize) -> FmsStepperConfig {
    let s = StepperConfig::new(method.into(), n_steps);
    FmsStepperConfig {
        method,
        n_steps,
        noise_scale: s.noise_scale,
        eta: s.eta,
        alpha_start: s.alpha_envelope.0,
        alpha_end: s.alpha_envelope.1,
        kernel_bandwidth: 0.0,
    }
}

/// Create a diagonal Gaussian mixture with `n_components` components in `dim`
/// dimensions. `means` and `variances` hold `n_components * dim` values.
///
/// # Safety
/// Array arguments must point to the stated number of readable values and
/// `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn fms_target_new(
    n_components: usize,
    dim: usize,
    weights: *const f64,
    means: *const f64,
    variances: *const f64,
    out: *mut *mut FmsTarget,
) -> FmsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_components.checked_mul(dim).ok_or_else(|| Fail(FmsStatus::InvalidArgument, "size overflow".into()))?;
        let w = unsafe { input(weights, n_components, "weights")? };
        let m = unsafe { input(means, len, "means")? };
        let v = unsafe { input(variances, len, "variances")? };
        if dim == 0 {
            return Err(Fail(FmsStatus::InvalidArgument, "dim must be positive".into()));
        }
        let target = GaussianMixtureTarget::new(
            w.to_vec(),
            m.chunks(dim).map(<[f64]>::to_vec).collect(),
            v.chunks(dim).map(<[f64]>::to_vec).collect(),
        )?;
        let handle = Box::new(FmsTarget { field: AnalyticField::new(target) });
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// Release a target. Null is accepted.
///
/// # Safety
/// `target` must be null or a live handle from [`fms_target_new`].
#[no_mangle]
pub unsafe extern "C" fn fms_target_free(target: *mut FmsTarget) {
    if !target.is_null() {
        // SAFETY: the handle was produced by Box::into_raw and is freed once.
        let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { Box::from_raw(target) })));
    }
}

/// Dimension of the target, or 0 for null.
///
/// # Safety
/// `target` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fms_target_dim(target: *const FmsTarget) -> usize {
    unsafe { target.as_ref() }.map_or(0, |t| t.field.dim())
}

/// `log p_t(x)`; `x` holds `dim` values.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn fms_log_density(target: *const FmsTarget, x: *const f64, t: f64, out: *mut f64) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        let x = unsafe { input(x, tg.field.dim(), "x")? };
        if out.is_null() {
            return Err(null("out"));
        }
        let v = tg.field.target().log_density_at(x, t)?;
        // SAFETY: checked non-null above.
        unsafe { *out = v };
        Ok(())
    })
}

/// Marginal velocity at `(x, t)` into `out` (`dim` values).
///
/// # Safety
/// Pointers must be valid for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn fms_velocity(target: *const FmsTarget, x: *const f64, t: f64, out: *mut f64) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        let d = tg.field.dim();
        let x = unsafe { input(x, d, "x")? };
        let out = unsafe { output(out, d, "out")? };
        out.copy_from_slice(&tg.field.velocity(x, t)?);
        Ok(())
    })
}

/// Marginal score at `(x, t)` into `out` (`dim` values).
///
/// # Safety
/// Pointers must be valid for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn fms_score(target: *const FmsTarget, x: *const f64, t: f64, out: *mut f64) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        let d = tg.field.dim();
        let x = unsafe { input(x, d, "x")? };
        let out = unsafe { output(out, d, "out")? };
        out.copy_from_slice(&tg.field.score(x, t)?);
        Ok(())
    })
}

/// `(I - s s^T / |s|^2) eps` into `out`; all arrays hold `dim` values.
///
/// # Safety
/// Pointers must be valid for `dim` values.
#[no_mangle]
pub unsafe extern "C" fn fms_score_orth_project(eps: *const f64, s: *const f64, dim: usize, out: *mut f64) -> FmsStatus {
    guard(|| {
        let e = unsafe { input(eps, dim, "eps")? };
        let s = unsafe { input(s, dim, "s")? };
        let out = unsafe { output(out, dim, "out")? };
        out.copy_from_slice(&score_orth_project(e, s));
        Ok(())
    })
}

/// Integrate `n` particles from `x0` (`n * dim` values, one batch at t = 0)
/// to t = 1, writing terminals to `out` (`n * dim` values).
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn fms_sample(
    target: *const FmsTarget,
    config: *const FmsStepperConfig,
    x0: *const f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        // SAFETY: non-null config points to a caller-owned struct.
        let cfg: StepperConfig = unsafe { config.as_ref() }.ok_or_else(|| null("config"))?.into();
        let d = tg.field.dim();
        let len = n.checked_mul(d).ok_or_else(|| Fail(FmsStatus::InvalidArgument, "size overflow".into()))?;
        let x0 = unsafe { input(x0, len, "x0")? };
        let out = unsafe { output(out, len, "out")? };
        let batch = ParticleBatch::new(x0.chunks(d).map(<[f64]>::to_vec).collect(), 0.0, 0)?;
        let xs = sample_terminals(&batch, &cfg, &tg.field, &RngStream::new(seed))?;
        for (o, x) in out.chunks_mut(d).zip(&xs) {
            o.copy_from_slice(x);
        }
        Ok(())
    })
}

unsafe fn write_outcome(
    o: &fmscale::search::SearchOutcome,
    d: usize,
    out_x: *mut f64,
    out_score: *mut f64,
    out_compute: *mut f64,
) -> Result<(), Fail> {
    let x = unsafe { output(out_x, d, "out_x")? };
    if out_score.is_null() || out_compute.is_null() {
        return Err(null("out_score/out_compute"));
    }
    x.copy_from_slice(&o.best().x);
    // SAFETY: checked non-null above.
    unsafe {
        *out_score = o.best().score;
        *out_compute = o.compute_units;
    }
    Ok(())
}

/// Best-of-`n` random search with the log-density verifier and an
/// `n_steps` Euler ODE. Writes the winner (`dim` values), its score and the
/// compute units spent.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn fms_random_search(
    target: *const FmsTarget,
    n: usize,
    n_steps: usize,
    seed: u64,
    out_x: *mut f64,
    out_score: *mut f64,
    out_compute: *mut f64,
) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        let v = verifier_logdensity(tg.field.target());
        let o = random_search(n, 1, &StepperConfig::ode(n_steps), &tg.field, &v, &RngStream::new(seed))?;
        unsafe { write_outcome(&o, tg.field.dim(), out_x, out_score, out_compute) }
    })
}

/// Noise search from `x0` (`dim` values at t = 0) with `n` candidates per
/// round, one kept lineage, the standard round start times and the
/// log-density verifier.
///
/// # Safety
/// Pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn fms_noise_search(
    target: *const FmsTarget,
    config: *const FmsStepperConfig,
    x0: *const f64,
    n: usize,
    seed: u64,
    out_x: *mut f64,
    out_score: *mut f64,
    out_compute: *mut f64,
) -> FmsStatus {
    guard(|| {
        let tg = unsafe { target_ref(target)? };
        let cfg: StepperConfig = unsafe { config.as_ref() }.ok_or_else(|| null("config"))?.into();
        let d = tg.field.dim();
        let x0 = State::new(unsafe { input(x0, d, "x0")? }.to_vec(), 0.0)?;
        let v = verifier_logdensity(tg.field.target());
        let o = noise_search(&x0, &SearchBudget::standard(n)?, &cfg, &tg.field, &v, &RngStream::new(seed))?;
        unsafe { write_outcome(&o, d, out_x, out_score, out_compute) }
    })
}
