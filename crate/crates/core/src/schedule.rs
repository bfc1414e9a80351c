//! Interpolant schedules `x_t = a(t) x0 + b(t) x1 + sigma(t) eps`.
//!
//! `x0` is the reference (noise) sample and `x1` the data sample; `t = 0` is
//! the reference end and `t = 1` the data end. Two-coefficient
//! variance-preserving schedules `x_t = alpha_t x_data + sigma_t eps` are
//! stored in the same type with `a = sigma_t`, `b = alpha_t`, `sigma = 0`.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{check_dim, Error, Result};

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tolerance on the six boundary conditions.
pub const BOUNDARY_TOL: f64 = 1e-12;
/// Tolerance on the finite-difference check of the supplied derivatives.
pub const DERIVATIVE_TOL: f64 = 1e-6;
/// Central-difference step used by [`validate_schedule`].
pub const PROBE_STEP: f64 = 1e-5;

#[derive(Clone)]
pub struct ScheduleTriple {
    name: String,
    a: ScalarFn,
    b: ScalarFn,
    sigma: ScalarFn,
    da: ScalarFn,
    db: ScalarFn,
    dsigma: ScalarFn,
}

impl fmt::Debug for ScheduleTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScheduleTriple").field("name", &self.name).finish_non_exhaustive()
    }
}

fn zero() -> ScalarFn {
    Arc::new(|_| 0.0)
}

impl ScheduleTriple {
    /// Build a schedule from coefficient functions and their derivatives.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        a: ScalarFn,
        b: ScalarFn,
        sigma: ScalarFn,
        da: ScalarFn,
        db: ScalarFn,
        dsigma: ScalarFn,
    ) -> Self {
        Self { name: name.into(), a, b, sigma, da, db, dsigma }
    }

    /// Two-coefficient form `alpha_t * data + sigma_t * noise`.
    pub fn two_coefficient(
        name: impl Into<String>,
        alpha: ScalarFn,
        dalpha: ScalarFn,
        noise: ScalarFn,
        dnoise: ScalarFn,
    ) -> Self {
        Self::new(name, noise, alpha, zero(), dnoise, dalpha, zero())
    }

    /// The flow-matching path `a = 1 - t`, `b = t`, `sigma = 0`.
    pub fn linear() -> Self {
        Self::new(
            "linear",
            Arc::new(|t| 1.0 - t),
            Arc::new(|t| t),
            zero(),
            Arc::new(|_| -1.0),
            Arc::new(|_| 1.0),
            zero(),
        )
    }

    /// Trigonometric variance-preserving path, `alpha_t = sin(pi t / 2)`,
    /// `sigma_t = cos(pi t / 2)`.
    pub fn vp_trig() -> Self {
        Self::two_coefficient(
            "vp_trig",
            Arc::new(|t| (FRAC_PI_2 * t).sin()),
            Arc::new(|t| FRAC_PI_2 * (FRAC_PI_2 * t).cos()),
            Arc::new(|t| (FRAC_PI_2 * t).cos()),
            Arc::new(|t| -FRAC_PI_2 * (FRAC_PI_2 * t).sin()),
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn a(&self, t: f64) -> f64 {
        (self.a)(t)
    }
    pub fn b(&self, t: f64) -> f64 {
        (self.b)(t)
    }
    pub fn sigma(&self, t: f64) -> f64 {
        (self.sigma)(t)
    }
    pub fn da(&self, t: f64) -> f64 {
        (self.da)(t)
    }
    pub fn db(&self, t: f64) -> f64 {
        (self.db)(t)
    }
    pub fn dsigma(&self, t: f64) -> f64 {
        (self.dsigma)(t)
    }

    /// Signal-to-noise ratio `b(t) / a(t)`.
    pub fn snr(&self, t: f64) -> f64 {
        self.b(t) / self.a(t)
    }
}

/// `a(t) x0 + b(t) x1 + sigma(t) eps`.
pub fn interpolate(x0: &[f64], x1: &[f64], eps: &[f64], t: f64, sched: &ScheduleTriple) -> Result<Vec<f64>> {
    check_dim(x0.len(), x1.len())?;
    check_dim(x0.len(), eps.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let (a, b, s) = (sched.a(t), sched.b(t), sched.sigma(t));
    Ok(x0
        .iter()
        .zip(x1)
        .zip(eps)
        .map(|((&u, &v), &e)| a * u + b * v + s * e)
        .collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleReport {
    pub schedule: String,
    pub n_probe: usize,
    pub probe_step: f64,
    /// Largest absolute violation among the six boundary conditions.
    pub boundary_violation: f64,
    /// Largest |supplied derivative - central difference| over the probes.
    pub derivative_mismatch: f64,
    /// Any coefficient evaluated to a non-finite value.
    pub non_finite: bool,
}

impl ScheduleReport {
    pub fn boundary_ok(&self) -> bool {
        self.boundary_violation <= BOUNDARY_TOL
    }

    pub fn derivatives_ok(&self) -> bool {
        self.derivative_mismatch <= DERIVATIVE_TOL
    }

    pub fn passed(&self) -> bool {
        !self.non_finite && self.boundary_ok() && self.derivatives_ok()
    }
}

/// Check boundary conditions and derivative consistency at `n_probe`
/// equally spaced interior points. Failures are reported, never raised.
pub fn validate_schedule(sched: &ScheduleTriple, n_probe: usize) -> ScheduleReport {
    let n_probe = n_probe.max(2);
    let boundary = [
        (sched.a(0.0) - 1.0).abs(),
        sched.b(0.0).abs(),
        sched.sigma(0.0).abs(),
        sched.a(1.0).abs(),
        (sched.b(1.0) - 1.0).abs(),
        sched.sigma(1.0).abs(),
    ];
    let mut non_finite = boundary.iter().any(|v| !v.is_finite());
    let boundary_violation = boundary.iter().cloned().fold(0.0, f64::max);

    let h = PROBE_STEP;
    let pairs: [(&ScalarFn, &ScalarFn); 3] =
        [(&sched.a, &sched.da), (&sched.b, &sched.db), (&sched.sigma, &sched.dsigma)];
    let mut derivative_mismatch = 0.0_f64;
    for i in 1..=n_probe {
        let t = i as f64 / (n_probe + 1) as f64;
        for (f, df) in pairs {
            let fd = (f(t + h) - f(t - h)) / (2.0 * h);
            let diff = (df(t) - fd).abs();
            if !diff.is_finite() {
                non_finite = true;
            } else {
                derivative_mismatch = derivative_mismatch.max(diff);
            }
        }
    }

    ScheduleReport {
        schedule: sched.name.clone(),
        n_probe,
        probe_step: h,
        boundary_violation,
        derivative_mismatch,
        non_finite,
    }
}
