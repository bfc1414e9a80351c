//! Velocity and score fields.
//!
//! [`AnalyticField`] gives the exact marginal velocity `E[x1 - x0 | x_t = x]`
//! and score `grad log p_t(x)` of a Gaussian mixture under the linear path
//! with independent coupling. [`score_from_velocity`] and
//! [`convert_velocity_to_vp`] are the inference-time transformations that
//! only need a velocity field.

use std::sync::Arc;

use crate::error::{check_dim, check_finite, Error, Result};
use crate::mixture::{ComponentMarginal, GaussianMixtureTarget};
use crate::schedule::ScheduleTriple;

/// Default distance kept from the singular end of the interval.
pub const DEFAULT_T_CLAMP: f64 = 1e-3;

const BOUND_SLACK: f64 = 1e-12;
const SNR_FD_STEP: f64 = 1e-5;
const DENOMINATOR_MIN: f64 = 1e-9;

/// A time-dependent velocity field together with its score.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>>;

    /// Fields are not evaluated closer than this to `t = 1`.
    fn t_clamp(&self) -> f64 {
        DEFAULT_T_CLAMP
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldEvaluation {
    pub velocity: Vec<f64>,
    pub score: Vec<f64>,
    pub log_density: f64,
}

/// Closed-form fields of a Gaussian mixture target.
#[derive(Clone, Debug)]
pub struct AnalyticField {
    target: Arc<GaussianMixtureTarget>,
    t_clamp: f64,
}

impl AnalyticField {
    pub fn new(target: GaussianMixtureTarget) -> Self {
        Self { target: Arc::new(target), t_clamp: DEFAULT_T_CLAMP }
    }

    pub fn with_t_clamp(mut self, t_clamp: f64) -> Self {
        self.t_clamp = t_clamp;
        self
    }

    pub fn target(&self) -> &GaussianMixtureTarget {
        &self.target
    }

    fn check(&self, x: &[f64], t: f64) -> Result<()> {
        check_dim(self.target.dim(), x.len())?;
        let hi = 1.0 - self.t_clamp;
        if !(t >= 0.0 && t <= hi + BOUND_SLACK) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi });
        }
        Ok(())
    }

    /// Velocity, score and log-density from one pass over the components.
    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<FieldEvaluation> {
        self.check(x, t)?;
        let tg = &self.target;
        let (log_density, resp) = tg.log_density_and_responsibilities(x, t);
        let d = x.len();
        let r = 1.0 - t;
        let mut velocity = vec![0.0; d];
        let mut score = vec![0.0; d];
        for (k, &rk) in resp.iter().enumerate() {
            if rk == 0.0 {
                continue;
            }
            for i in 0..d {
                let mu = tg.means()[k][i];
                let v = tg.variances()[k][i];
                let s = r * r + t * t * v;
                let z = x[i] - t * mu;
                // E[x1 | x_t] - E[x0 | x_t] for this component
                velocity[i] += rk * (mu + (t * v - r) / s * z);
                score[i] -= rk * z / s;
            }
        }
        check_finite("analytic velocity", &velocity)?;
        check_finite("analytic score", &score)?;
        Ok(FieldEvaluation { velocity, score, log_density })
    }
}

impl VectorField for AnalyticField {
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.evaluate(x, t).map(|e| e.velocity)
    }

    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.evaluate(x, t).map(|e| e.score)
    }

    fn t_clamp(&self) -> f64 {
        self.t_clamp
    }
}

pub fn marginal_stats(target: &GaussianMixtureTarget, t: f64) -> Result<Vec<ComponentMarginal>> {
    target.marginal_stats(t)
}

/// Exact marginal velocity `u_t(x)`, for `t` in `[0, 1 - DEFAULT_T_CLAMP]`.
pub fn analytic_velocity(target: &GaussianMixtureTarget, x: &[f64], t: f64) -> Result<Vec<f64>> {
    AnalyticField::new(target.clone()).velocity(x, t)
}

/// Exact score `grad log p_t(x)`, for `t` in `[0, 1 - DEFAULT_T_CLAMP]`.
pub fn analytic_score(target: &GaussianMixtureTarget, x: &[f64], t: f64) -> Result<Vec<f64>> {
    AnalyticField::new(target.clone()).score(x, t)
}

/// Score recovered from a velocity:
/// `(1 / sigma_t) (alpha_t u - alpha_t' x) / (alpha_t' sigma_t - alpha_t sigma_t')`
/// with `alpha_t = b(t)` the data coefficient and `sigma_t = a(t)` the
/// reference coefficient. For the linear path the denominator is exactly 1.
pub fn score_from_velocity(u: &[f64], x: &[f64], t: f64, sched: &ScheduleTriple) -> Result<Vec<f64>> {
    score_from_velocity_clamped(u, x, t, sched, DEFAULT_T_CLAMP)
}

pub fn score_from_velocity_clamped(
    u: &[f64],
    x: &[f64],
    t: f64,
    sched: &ScheduleTriple,
    t_clamp: f64,
) -> Result<Vec<f64>> {
    check_dim(u.len(), x.len())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
    }
    let (alpha, dalpha) = (sched.b(t), sched.db(t));
    let (sigma, dsigma) = (sched.a(t), sched.da(t));
    let denom = dalpha * sigma - alpha * dsigma;
    if !(sigma > 0.0) || sigma < t_clamp {
        return Err(Error::Singularity { what: "score (noise coefficient vanishes)", t });
    }
    if !(denom.abs() >= DENOMINATOR_MIN) {
        return Err(Error::Singularity { what: "score (degenerate schedule derivative)", t });
    }
    let scale = 1.0 / (sigma * denom);
    let out: Vec<f64> = u
        .iter()
        .zip(x)
        .map(|(&ui, &xi)| scale * (alpha * ui - dalpha * xi))
        .collect();
    check_finite("score from velocity", &out)?;
    Ok(out)
}

/// Wraps a velocity field and recovers its score with [`score_from_velocity`]
/// under the linear schedule.
pub struct ScoreFromVelocity<F> {
    inner: F,
    sched: ScheduleTriple,
}

impl<F: VectorField> ScoreFromVelocity<F> {
    pub fn new(inner: F) -> Self {
        Self { inner, sched: ScheduleTriple::linear() }
    }
}

impl<F: VectorField> VectorField for ScoreFromVelocity<F> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.inner.velocity(x, t)
    }
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let u = self.inner.velocity(x, t)?;
        // t = 0 has a(0) = 1, so only the data end needs the clamp
        score_from_velocity_clamped(&u, x, t, &self.sched, self.inner.t_clamp())
    }
    fn t_clamp(&self) -> f64 {
        self.inner.t_clamp()
    }
}

type FieldFn = Arc<dyn Fn(&[f64], f64) -> Vec<f64> + Send + Sync>;

/// A field built from closures; handy for synthetic dynamics and tests.
#[derive(Clone)]
pub struct ClosureField {
    dim: usize,
    velocity: FieldFn,
    score: FieldFn,
}

impl ClosureField {
    pub fn new(
        dim: usize,
        velocity: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
        score: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self { dim, velocity: Arc::new(velocity), score: Arc::new(score) }
    }

    /// Velocity-only field; the score is the zero vector.
    pub fn velocity_only(dim: usize, velocity: impl Fn(&[f64], f64) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self::new(dim, velocity, move |x, _| vec![0.0; x.len()])
    }
}

impl VectorField for ClosureField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((self.velocity)(x, t))
    }
    fn score(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok((self.score)(x, t))
    }
}

/// Solve `sched.snr(t) = target` on `[lo, hi]` by bisection.
fn invert_snr(sched: &ScheduleTriple, target: f64, lo: f64, hi: f64) -> Result<f64> {
    let (rlo, rhi) = (sched.snr(lo), sched.snr(hi));
    let increasing = rhi > rlo;
    let (min, max) = if increasing { (rlo, rhi) } else { (rhi, rlo) };
    if !(target >= min && target <= max) {
        return Err(Error::NotBracketed { target, lo: min, hi: max });
    }
    // run to float resolution: the time derivative of the inverse is a
    // finite difference, which amplifies any residual
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let r = sched.snr(mid);
        if r == target || mid <= a || mid >= b {
            return Ok(mid);
        }
        if (r < target) == increasing {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

fn check_monotone(sched: &ScheduleTriple, which: &'static str, lo: f64, hi: f64) -> Result<()> {
    const N: usize = 256;
    let vals: Vec<f64> = (0..=N).map(|i| sched.snr(lo + (hi - lo) * i as f64 / N as f64)).collect();
    let up = vals.windows(2).all(|w| w[1] > w[0]);
    let down = vals.windows(2).all(|w| w[1] < w[0]);
    if up || down {
        Ok(())
    } else {
        Err(Error::NonMonotoneSnr { which, lo, hi })
    }
}

/// A fallible velocity `u(x, t)`.
pub type VelocityFn<'a> = dyn Fn(&[f64], f64) -> Result<Vec<f64>> + 'a;

/// Re-express a velocity trained on `source_sched` as the velocity of the
/// interpolant `target_sched`, evaluated at `(x_bar, s)`:
///
/// `u_bar_s(x) = (c_s' / c_s) x + c_s t_s' u_{t_s}(x / c_s)` with
/// `t_s = rho^{-1}(rho_bar(s))` and `c_s = sigma_bar_s / sigma_{t_s}`.
///
/// The SNR inverse is found by bisection (to float resolution) on `[t_clamp, 1 - t_clamp]`; the
/// derivatives `c_s'` and `t_s'` by central differences with step `1e-5`.
pub fn convert_velocity_to_vp(
    u_field: &VelocityFn,
    target_sched: &ScheduleTriple,
    source_sched: &ScheduleTriple,
    x_bar: &[f64],
    s: f64,
) -> Result<Vec<f64>> {
    let (lo, hi) = (DEFAULT_T_CLAMP, 1.0 - DEFAULT_T_CLAMP);
    if !(s >= lo - BOUND_SLACK && s <= hi + BOUND_SLACK) {
        return Err(Error::TimeOutOfRange { t: s, lo, hi });
    }
    check_monotone(source_sched, "source", lo, hi)?;
    check_monotone(target_sched, "target", lo, hi)?;

    let t_of = |s: f64| invert_snr(source_sched, target_sched.snr(s), lo, hi);
    let c_of = |s: f64, ts: f64| target_sched.a(s) / source_sched.a(ts);

    let ts = t_of(s)?;
    let c = c_of(s, ts);
    let h = SNR_FD_STEP;
    let (tp, tm) = (t_of(s + h)?, t_of(s - h)?);
    let dts = (tp - tm) / (2.0 * h);
    let dc = (c_of(s + h, tp) - c_of(s - h, tm)) / (2.0 * h);

    let scaled: Vec<f64> = x_bar.iter().map(|x| x / c).collect();
    let u = u_field(&scaled, ts)?;
    check_dim(x_bar.len(), u.len())?;
    let out: Vec<f64> = x_bar
        .iter()
        .zip(&u)
        .map(|(&x, &ui)| dc / c * x + c * dts * ui)
        .collect();
    check_finite("converted velocity", &out)?;
    Ok(out)
}
