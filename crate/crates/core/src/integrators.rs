//! Euler and Euler-Maruyama steppers for the six sampling dynamics.
//!
//! Time runs on the uniform grid `t_k = k / n_steps`. Every random draw comes
//! from the stream `rng.child(particle).child(step)` where `step` is the
//! absolute grid index, so a trajectory restarted from a checkpoint sees the
//! same noise as the original run would have from that point on.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_finite, Error, Result};
use crate::fields::VectorField;
use crate::rng::RngStream;
use crate::state::{State, Trajectory};

/// Slack used when deciding whether a time lies on the grid.
pub const GRID_TOL: f64 = 1e-9;
/// Scores with a smaller norm are treated as zero by the projection.
pub const DEGENERATE_SCORE_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ode,
    Sde,
    EdmSde,
    ScoreSde,
    ScoreOrthOde,
    DmfmOde,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Ode, Method::Sde, Method::EdmSde, Method::ScoreSde, Method::ScoreOrthOde, Method::DmfmOde];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ode => "ode",
            Method::Sde => "sde",
            Method::EdmSde => "edm_sde",
            Method::ScoreSde => "score_sde",
            Method::ScoreOrthOde => "score_orth_ode",
            Method::DmfmOde => "dmfm_ode",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn is_stochastic(self) -> bool {
        self != Method::Ode
    }

    /// Noise magnitude at which the method is run by default on the toy targets.
    pub fn reference_noise_scale(self) -> f64 {
        match self {
            Method::Ode => 0.0,
            Method::Sde => 0.14,
            Method::EdmSde => 0.5,
            Method::ScoreSde => 0.3,
            Method::ScoreOrthOde | Method::DmfmOde => 0.9,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Time profile multiplied by `noise_scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Profile {
    Constant,
    /// `1 - t`
    Decay,
    Linear { start: f64, end: f64 },
}

impl Profile {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Profile::Constant => 1.0,
            Profile::Decay => 1.0 - t,
            Profile::Linear { start, end } => start + (end - start) * t,
        }
    }
}

/// RBF bandwidth for particle guidance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bandwidth {
    /// Median pairwise distance in the batch, recomputed every step.
    Median,
    Fixed(f64),
}

impl Serialize for Bandwidth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bandwidth::Median => s.serialize_str("median"),
            Bandwidth::Fixed(h) => s.serialize_f64(*h),
        }
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Value(f64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Value(h) if h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            Repr::Value(h) => Err(serde::de::Error::custom(format!("bandwidth must be positive, got {h}"))),
            Repr::Name(n) if n == "median" => Ok(Bandwidth::Median),
            Repr::Name(n) => Err(serde::de::Error::custom(format!("unknown bandwidth `{n}`, expected a number or \"median\""))),
        }
    }
}

/// Fully resolved stepper settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperConfig {
    pub method: Method,
    pub n_steps: usize,
    /// lambda for score-orth/DMFM, sigma for SDE, base magnitude for EDM and Score-SDE.
    pub noise_scale: f64,
    /// EDM: `beta(t) = noise_scale * beta_schedule(t)`.
    pub beta_schedule: Profile,
    /// Score-SDE: `g(t) = noise_scale * g_schedule(t)`.
    pub g_schedule: Profile,
    /// Particle-guidance magnitude (DMFM).
    pub eta: f64,
    /// Linear noise envelope `(alpha(0), alpha(1))` (DMFM).
    pub alpha_envelope: (f64, f64),
    pub kernel_bandwidth: Bandwidth,
}

impl StepperConfig {
    /// Defaults for `method` at its reference noise scale.
    pub fn new(method: Method, n_steps: usize) -> Self {
        Self {
            method,
            n_steps,
            noise_scale: method.reference_noise_scale(),
            beta_schedule: Profile::Constant,
            g_schedule: Profile::Decay,
            eta: 0.02,
            alpha_envelope: (1.0, 0.7),
            kernel_bandwidth: Bandwidth::Median,
        }
    }

    pub fn ode(n_steps: usize) -> Self {
        Self::new(Method::Ode, n_steps)
    }

    pub fn with_noise_scale(mut self, noise_scale: f64) -> Self {
        self.noise_scale = noise_scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_steps == 0 {
            return bad("n_steps must be at least 1".into());
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad(format!("noise_scale must be nonnegative, got {}", self.noise_scale));
        }
        if self.method == Method::Ode && self.noise_scale != 0.0 {
            return bad("the ode method takes no noise_scale".into());
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be nonnegative, got {}", self.eta));
        }
        let (a0, a1) = self.alpha_envelope;
        if !(a0.is_finite() && a1.is_finite()) {
            return bad("alpha_envelope must be finite".into());
        }
        if let Bandwidth::Fixed(h) = self.kernel_bandwidth {
            if !(h > 0.0 && h.is_finite()) {
                return bad(format!("kernel_bandwidth must be positive, got {h}"));
            }
        }
        for (name, p) in [("beta_schedule", self.beta_schedule), ("g_schedule", self.g_schedule)] {
            if [0.0, 0.5, 1.0].iter().any(|&t| !(p.at(t) >= 0.0)) {
                return bad(format!("{name} must be nonnegative on [0, 1]"));
            }
        }
        Ok(())
    }

    /// `alpha(t)` of the DMFM envelope.
    pub fn alpha(&self, t: f64) -> f64 {
        let (a0, a1) = self.alpha_envelope;
        a0 + (a1 - a0) * t
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.n_steps as f64
    }
}

/// States sharing one time and one initial noise.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleBatch {
    xs: Vec<Vec<f64>>,
    t: f64,
    pub group_id: u64,
}

impl ParticleBatch {
    pub fn new(xs: Vec<Vec<f64>>, t: f64, group_id: u64) -> Result<Self> {
        let Some(first) = xs.first() else {
            return Err(Error::InvalidArgument("a batch needs at least one particle".into()));
        };
        let d = first.len();
        for x in &xs {
            check_dim(d, x.len())?;
            check_finite("particle", x)?;
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        Ok(Self { xs, t, group_id })
    }

    /// `n` copies of one state.
    pub fn replicate(x: &[f64], n: usize, t: f64, group_id: u64) -> Result<Self> {
        Self::new(vec![x.to_vec(); n], t, group_id)
    }

    pub fn from_states(states: &[State], group_id: u64) -> Result<Self> {
        let t = states.first().map_or(0.0, |s| s.t);
        if states.iter().any(|s| s.t != t) {
            return Err(Error::InvalidArgument("batch members must share one time".into()));
        }
        Self::new(states.iter().map(|s| s.x.clone()).collect(), t, group_id)
    }

    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn len(&self) -> usize {
        self.xs.len()
    }
    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
    pub fn dim(&self) -> usize {
        self.xs[0].len()
    }
    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }
    pub fn into_xs(self) -> Vec<Vec<f64>> {
        self.xs
    }
    pub fn states(&self) -> Vec<State> {
        self.xs.iter().map(|x| State { x: x.clone(), t: self.t }).collect()
    }
}

fn eval_time(field: &dyn VectorField, t: f64) -> f64 {
    t.min(1.0 - field.t_clamp())
}

fn velocity(field: &dyn VectorField, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let u = field.velocity(x, eval_time(field, t))?;
    check_finite("velocity", &u)?;
    Ok(u)
}

fn score(field: &dyn VectorField, x: &[f64], t: f64) -> Result<Vec<f64>> {
    let s = field.score(x, eval_time(field, t))?;
    check_finite("score", &s)?;
    Ok(s)
}

fn check_step(t: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0) || !(t >= 0.0) || t + dt > 1.0 + GRID_TOL {
        return Err(Error::InvalidArgument(format!("invalid step t = {t}, dt = {dt}")));
    }
    Ok(())
}

fn finish(what: &str, x: Vec<f64>) -> Result<Vec<f64>> {
    check_finite(what, &x)?;
    Ok(x)
}

/// Explicit Euler: `x + dt u(x, t)`.
pub fn ode_step(x: &[f64], t: f64, dt: f64, field: &dyn VectorField) -> Result<Vec<f64>> {
    check_step(t, dt)?;
    let u = velocity(field, x, t)?;
    finish("ode step", x.iter().zip(&u).map(|(xi, ui)| xi + dt * ui).collect())
}

/// Euler-Maruyama for `dx = u dt + sigma dW`.
pub fn sde_step(x: &[f64], t: f64, dt: f64, field: &dyn VectorField, sigma: f64, rng: &RngStream) -> Result<Vec<f64>> {
    if sigma == 0.0 {
        return ode_step(x, t, dt, field);
    }
    check_step(t, dt)?;
    let u = velocity(field, x, t)?;
    let z = rng.standard_normal(x.len());
    let amp = sigma * dt.sqrt();
    finish("sde step", (0..x.len()).map(|i| x[i] + dt * u[i] + amp * z[i]).collect())
}

/// Euler-Maruyama for `dx = [u + beta sigma_t^2 s] dt + sqrt(2 beta) sigma_t dW`.
pub fn edm_sde_step(
    x: &[f64],
    t: f64,
    dt: f64,
    field: &dyn VectorField,
    beta: f64,
    sigma_t: f64,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if beta == 0.0 || sigma_t == 0.0 {
        return ode_step(x, t, dt, field);
    }
    if !(beta > 0.0 && sigma_t > 0.0) {
        return Err(Error::InvalidArgument(format!("beta and sigma_t must be nonnegative, got {beta}, {sigma_t}")));
    }
    check_step(t, dt)?;
    let u = velocity(field, x, t)?;
    let s = score(field, x, t)?;
    let z = rng.standard_normal(x.len());
    let drift = beta * sigma_t * sigma_t;
    let amp = (2.0 * beta).sqrt() * sigma_t * dt.sqrt();
    finish("edm step", (0..x.len()).map(|i| x[i] + dt * (u[i] + drift * s[i]) + amp * z[i]).collect())
}

/// Euler-Maruyama for `dx = [u + (g^2 / 2) s] dt + g dW`.
pub fn score_sde_step(x: &[f64], t: f64, dt: f64, field: &dyn VectorField, g: f64, rng: &RngStream) -> Result<Vec<f64>> {
    if g == 0.0 {
        return ode_step(x, t, dt, field);
    }
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(format!("g must be nonnegative, got {g}")));
    }
    check_step(t, dt)?;
    let u = velocity(field, x, t)?;
    let s = score(field, x, t)?;
    let z = rng.standard_normal(x.len());
    let amp = g * dt.sqrt();
    finish("score-sde step", (0..x.len()).map(|i| x[i] + dt * (u[i] + 0.5 * g * g * s[i]) + amp * z[i]).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `(I - s_hat s_hat^T) eps`. Scores with norm below `1e-12` leave `eps` unchanged.
pub fn score_orth_project(eps: &[f64], s: &[f64]) -> Vec<f64> {
    let n = norm(s);
    if !(n >= DEGENERATE_SCORE_NORM) || !n.is_finite() {
        return eps.to_vec();
    }
    let s_hat: Vec<f64> = s.iter().map(|c| c / n).collect();
    let mut w = eps.to_vec();
    // second pass removes the rounding residue of the first
    for _ in 0..2 {
        let c = dot(&w, &s_hat);
        for (wi, si) in w.iter_mut().zip(&s_hat) {
            *wi -= c * si;
        }
    }
    w
}

/// Deterministic ODE plus score-orthogonal noise: `x + dt (u + lambda Pi eps)`.
pub fn score_orth_ode_step(
    x: &[f64],
    t: f64,
    dt: f64,
    field: &dyn VectorField,
    lambda: f64,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    if lambda == 0.0 {
        return ode_step(x, t, dt, field);
    }
    check_step(t, dt)?;
    let u = velocity(field, x, t)?;
    let s = score(field, x, t)?;
    let w = score_orth_project(&rng.standard_normal(x.len()), &s);
    finish("score-orth step", (0..x.len()).map(|i| x[i] + dt * (u[i] + lambda * w[i])).collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Unit-norm repulsion directions `-grad_i sum_{j != i} k(x_i, x_j) / (N - 1)`
/// for an RBF kernel `exp(-|x - y|^2 / (2 h^2))`.
pub fn particle_guidance(xs: &[Vec<f64>], bandwidth: Bandwidth) -> Vec<Vec<f64>> {
    let n = xs.len();
    let d = xs.first().map_or(0, Vec::len);
    if n < 2 {
        return vec![vec![0.0; d]; n];
    }
    let dist2 = |i: usize, j: usize| xs[i].iter().zip(&xs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    let h = match bandwidth {
        Bandwidth::Fixed(h) => h,
        Bandwidth::Median => {
            let mut ds = Vec::with_capacity(n * (n - 1) / 2);
            for i in 0..n {
                for j in i + 1..n {
                    ds.push(dist2(i, j).sqrt());
                }
            }
            let m = median(ds);
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    };
    let h2 = h * h;
    (0..n)
        .map(|i| {
            let mut g = vec![0.0; d];
            for j in (0..n).filter(|&j| j != i) {
                let k = (-dist2(i, j) / (2.0 * h2)).exp();
                for (c, gc) in g.iter_mut().enumerate() {
                    *gc += k * (xs[i][c] - xs[j][c]) / h2;
                }
            }
            // the 1 / (N - 1) average cancels under normalization
            let nrm = norm(&g);
            if nrm > 0.0 && nrm.is_finite() {
                g.iter_mut().for_each(|c| *c /= nrm);
            } else {
                g.iter_mut().for_each(|c| *c = 0.0);
            }
            g
        })
        .collect()
}

/// One DMFM step for the whole batch:
/// `x_i + dt (u + lambda alpha(t) Pi_{perp s}[eps_i + eta g_i])`.
/// `streams[i]` supplies `eps_i`.
pub fn dmfm_step(
    batch: &ParticleBatch,
    dt: f64,
    field: &dyn VectorField,
    cfg: &StepperConfig,
    streams: &[RngStream],
) -> Result<ParticleBatch> {
    check_dim(batch.len(), streams.len())?;
    let t = batch.t();
    let lambda = cfg.noise_scale;
    let next: Vec<Vec<f64>> = if lambda == 0.0 {
        batch.xs().par_iter().map(|x| ode_step(x, t, dt, field)).collect::<Result<_>>()?
    } else {
        check_step(t, dt)?;
        let guide = if cfg.eta > 0.0 {
            Some(particle_guidance(batch.xs(), cfg.kernel_bandwidth))
        } else {
            None
        };
        let amp = lambda * cfg.alpha(t);
        batch
            .xs()
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let u = velocity(field, x, t)?;
                let s = score(field, x, t)?;
                let mut v = streams[i].standard_normal(x.len());
                if let Some(g) = &guide {
                    v.iter_mut().zip(&g[i]).for_each(|(vi, gi)| *vi += cfg.eta * gi);
                }
                let w = score_orth_project(&v, &s);
                finish("dmfm step", (0..x.len()).map(|c| x[c] + dt * (u[c] + amp * w[c])).collect())
            })
            .collect::<Result<_>>()?
    };
    ParticleBatch::new(next, (t + dt).min(1.0), batch.group_id)
}

/// Largest grid time not above `t` (with `1e-9` slack).
pub fn snap_to_grid(t: f64, n_steps: usize) -> f64 {
    grid_floor(t, n_steps) as f64 / n_steps as f64
}

fn grid_floor(t: f64, n_steps: usize) -> usize {
    ((t * n_steps as f64 + GRID_TOL).floor().max(0.0) as usize).min(n_steps)
}

/// Index `k` with `k / n_steps == t` up to `1e-9`.
pub fn grid_index(t: f64, n_steps: usize) -> Result<usize> {
    let k = (t * n_steps as f64).round();
    if !(0.0..=1.0).contains(&t) || (k / n_steps as f64 - t).abs() > GRID_TOL {
        return Err(Error::OffGrid { t, n_steps });
    }
    Ok(k as usize)
}

fn grid_time(k: usize, n_steps: usize) -> f64 {
    if k >= n_steps {
        1.0
    } else {
        k as f64 / n_steps as f64
    }
}

/// Which states [`integrate`] keeps.
#[derive(Clone, Debug, PartialEq)]
pub enum Recording {
    /// Start, the listed times (snapped to the grid) and the terminal state.
    Checkpoints(Vec<f64>),
    EveryStep,
}

impl Recording {
    pub fn terminal_only() -> Self {
        Recording::Checkpoints(Vec::new())
    }
}

fn single_step(
    method: Method,
    cfg: &StepperConfig,
    x: &[f64],
    t: f64,
    dt: f64,
    field: &dyn VectorField,
    rng: &RngStream,
) -> Result<Vec<f64>> {
    let c = cfg.noise_scale;
    match method {
        Method::Ode => ode_step(x, t, dt, field),
        Method::Sde => sde_step(x, t, dt, field, c, rng),
        Method::EdmSde => edm_sde_step(x, t, dt, field, c * cfg.beta_schedule.at(t), 1.0 - t, rng),
        Method::ScoreSde => score_sde_step(x, t, dt, field, c * cfg.g_schedule.at(t), rng),
        Method::ScoreOrthOde => score_orth_ode_step(x, t, dt, field, c, rng),
        Method::DmfmOde => unreachable!("DMFM steps whole batches"),
    }
}

/// Drive every particle of `batch` from `batch.t()` to 1 on the uniform grid.
///
/// Particle `i` at grid index `k` draws its noise from `rng.child(i).child(k)`.
/// `batch.t()` must be a grid point.
pub fn integrate(
    batch: &ParticleBatch,
    cfg: &StepperConfig,
    field: &dyn VectorField,
    rng: &RngStream,
    recording: &Recording,
) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    check_dim(field.dim(), batch.dim())?;
    let n = cfg.n_steps;
    let k0 = grid_index(batch.t(), n)?;
    let keep: Vec<usize> = match recording {
        Recording::EveryStep => (k0..=n).collect(),
        Recording::Checkpoints(ts) => {
            let mut ks: Vec<usize> =
                ts.iter().map(|&t| grid_floor(t, n)).filter(|&k| k > k0 && k < n).collect();
            ks.push(k0);
            ks.push(n);
            ks.sort_unstable();
            ks.dedup();
            ks
        }
    };
    let streams: Vec<RngStream> = (0..batch.len() as u64).map(|i| rng.child(i)).collect();
    let mut seed_path = vec![rng.root_seed()];
    seed_path.extend_from_slice(rng.path());
    let make_traj = |i: usize, states: Vec<State>| {
        let mut path = seed_path.clone();
        path.push(i as u64);
        Trajectory {
            checkpoint_times: states.iter().map(|s| s.t).collect(),
            states,
            group_id: batch.group_id,
            seed_path: path,
        }
    };

    if cfg.method == Method::DmfmOde {
        let mut records: Vec<Vec<State>> = vec![Vec::with_capacity(keep.len()); batch.len()];
        let mut cur = batch.clone();
        for k in k0..=n {
            let t = grid_time(k, n);
            if keep.binary_search(&k).is_ok() {
                for (rec, x) in records.iter_mut().zip(cur.xs()) {
                    rec.push(State { x: x.clone(), t });
                }
            }
            if k == n {
                break;
            }
            let dt = grid_time(k + 1, n) - t;
            let step_streams: Vec<RngStream> = streams.iter().map(|s| s.child(k as u64)).collect();
            cur = dmfm_step(&ParticleBatch { t, ..cur }, dt, field, cfg, &step_streams)?;
        }
        return Ok(records.into_iter().enumerate().map(|(i, r)| make_traj(i, r)).collect());
    }

    batch
        .xs()
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let mut states = Vec::with_capacity(keep.len());
            let mut x = x0.clone();
            for k in k0..=n {
                let t = grid_time(k, n);
                if keep.binary_search(&k).is_ok() {
                    states.push(State { x: x.clone(), t });
                }
                if k == n {
                    break;
                }
                let dt = grid_time(k + 1, n) - t;
                x = single_step(cfg.method, cfg, &x, t, dt, field, &streams[i].child(k as u64))?;
            }
            Ok(make_traj(i, states))
        })
        .collect()
}

/// Terminal states of [`integrate`].
pub fn sample_terminals(
    batch: &ParticleBatch,
    cfg: &StepperConfig,
    field: &dyn VectorField,
    rng: &RngStream,
) -> Result<Vec<Vec<f64>>> {
    Ok(integrate(batch, cfg, field, rng, &Recording::terminal_only())?
        .into_iter()
        .map(|tr| tr.terminal().x.clone())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticField, ClosureField};
    use crate::mixture::GaussianMixtureTarget;

    fn std_normal_1d() -> AnalyticField {
        AnalyticField::new(GaussianMixtureTarget::single_gaussian(vec![0.0], 1.0).unwrap())
    }

    #[test]
    fn ode_step_trivial_fields() {
        let zero = ClosureField::velocity_only(2, |x, _| vec![0.0; x.len()]);
        assert_eq!(ode_step(&[1.5, -2.0], 0.3, 0.1, &zero).unwrap(), vec![1.5, -2.0]);
        let one = ClosureField::velocity_only(1, |_, _| vec![1.0]);
        let b = ParticleBatch::new(vec![vec![0.0]], 0.0, 0).unwrap();
        let out = sample_terminals(&b, &StepperConfig::ode(10), &one, &RngStream::new(0)).unwrap();
        assert!((out[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ode_step_rejects_non_finite() {
        let nan = ClosureField::velocity_only(1, |_, _| vec![f64::NAN]);
        assert!(matches!(ode_step(&[0.0], 0.0, 0.1, &nan), Err(Error::NonFinite(_))));
        assert!(ode_step(&[0.0], 0.95, 0.1, &nan).is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(score_orth_project(&[3.0, 4.0], &[1.0, 0.0]), vec![0.0, 4.0]);
        let w = score_orth_project(&[2.0, -4.0], &[-1.0, 2.0]);
        assert!(norm(&w) < 1e-15);
        assert_eq!(score_orth_project(&[3.0, 4.0], &[0.0, 0.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn guidance_examples() {
        assert_eq!(particle_guidance(&[vec![1.0, 2.0]], Bandwidth::Median), vec![vec![0.0, 0.0]]);
        let g = particle_guidance(&[vec![0.0, 0.0], vec![1.0, 1.0]], Bandwidth::Median);
        assert!(dot(&g[0], &g[1]) < -0.999_999);
        // each points away from the other particle
        assert!(g[0][0] < 0.0 && g[1][0] > 0.0);
        assert!((norm(&g[0]) - 1.0).abs() < 1e-12);
        let same = particle_guidance(&vec![vec![0.5, 0.5]; 4], Bandwidth::Median);
        assert!(same.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn envelope_values() {
        let c = StepperConfig::new(Method::DmfmOde, 20);
        assert_eq!(c.alpha(0.0), 1.0);
        assert!((c.alpha(0.5) - 0.85).abs() < 1e-15);
        assert!((c.alpha(1.0) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn grid_membership() {
        assert_eq!(grid_index(0.95, 20).unwrap(), 19);
        assert!(matches!(grid_index(0.83, 20), Err(Error::OffGrid { .. })));
        assert_eq!(snap_to_grid(0.83, 20), 0.8);
        assert_eq!(snap_to_grid(0.85, 20), 0.85);
        assert_eq!(snap_to_grid(0.75, 20), 0.75);
    }

    #[test]
    fn integrate_records_checkpoints() {
        let f = std_normal_1d();
        let cfg = StepperConfig::new(Method::Sde, 20);
        let b = ParticleBatch::replicate(&[0.3], 3, 0.2, 7).unwrap();
        let rec = Recording::Checkpoints(vec![0.0, 0.4, 0.83, 0.95]);
        let trs = integrate(&b, &cfg, &f, &RngStream::new(1), &rec).unwrap();
        assert_eq!(trs.len(), 3);
        for tr in &trs {
            assert_eq!(tr.checkpoint_times, vec![0.2, 0.4, 0.8, 0.95, 1.0]);
            assert!(tr.is_complete());
            assert_eq!(tr.group_id, 7);
        }
        assert_ne!(trs[0].terminal().x, trs[1].terminal().x);
        let again = integrate(&b, &cfg, &f, &RngStream::new(1), &rec).unwrap();
        assert_eq!(trs, again);
        let off = ParticleBatch::replicate(&[0.3], 1, 0.83, 0).unwrap();
        assert!(integrate(&off, &cfg, &f, &RngStream::new(1), &rec).is_err());
    }

    #[test]
    fn restart_from_checkpoint_replays_noise() {
        let f = std_normal_1d();
        for method in [Method::Sde, Method::DmfmOde] {
            let cfg = StepperConfig::new(method, 20);
            let rng = RngStream::new(3);
            let b = ParticleBatch::replicate(&[0.1], 1, 0.0, 0).unwrap();
            let full = integrate(&b, &cfg, &f, &rng, &Recording::Checkpoints(vec![0.6])).unwrap();
            let mid = full[0].state_at(0.6).unwrap();
            let rest = ParticleBatch::new(vec![mid.x.clone()], 0.6, 0).unwrap();
            let tail = integrate(&rest, &cfg, &f, &rng, &Recording::terminal_only()).unwrap();
            assert_eq!(tail[0].terminal().x, full[0].terminal().x, "{method}");
        }
    }

    #[test]
    fn zero_noise_is_bit_identical_to_ode() {
        let f = AnalyticField::new(GaussianMixtureTarget::two_component_2d());
        let b = ParticleBatch::new(vec![vec![0.3, -0.4], vec![1.2, 0.8], vec![-0.5, 0.1]], 0.0, 0).unwrap();
        let rng = RngStream::new(11);
        let ode = sample_terminals(&b, &StepperConfig::ode(20), &f, &rng).unwrap();
        for m in Method::ALL.into_iter().filter(|m| m.is_stochastic()) {
            let cfg = StepperConfig::new(m, 20).with_noise_scale(0.0);
            assert_eq!(sample_terminals(&b, &cfg, &f, &rng).unwrap(), ode, "{m}");
        }
    }

    #[test]
    fn dmfm_without_guidance_matches_score_orth() {
        let f = AnalyticField::new(GaussianMixtureTarget::two_component_2d());
        let b = ParticleBatch::new(vec![vec![0.3, -0.4]], 0.0, 0).unwrap();
        let rng = RngStream::new(5);
        let mut dmfm = StepperConfig::new(Method::DmfmOde, 20);
        dmfm.eta = 0.0;
        dmfm.alpha_envelope = (1.0, 1.0);
        let orth = StepperConfig::new(Method::ScoreOrthOde, 20);
        let a = sample_terminals(&b, &dmfm, &f, &rng).unwrap();
        let c = sample_terminals(&b, &orth, &f, &rng).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, sample_terminals(&b, &StepperConfig::ode(20), &f, &rng).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(StepperConfig::ode(0).validate().is_err());
        assert!(StepperConfig::ode(5).with_noise_scale(0.1).validate().is_err());
        assert!(StepperConfig::new(Method::Sde, 5).with_noise_scale(-1.0).validate().is_err());
        for m in Method::ALL {
            assert!(StepperConfig::new(m, 20).validate().is_ok());
            assert_eq!(Method::parse(m.name()), Some(m));
        }
    }

    #[test]
    fn config_serde() {
        let c = StepperConfig::new(Method::DmfmOde, 20);
        let j = serde_json::to_string(&c).unwrap();
        assert!(j.contains("\"median\""));
        assert_eq!(serde_json::from_str::<StepperConfig>(&j).unwrap(), c);
        let mut c2 = c.clone();
        c2.kernel_bandwidth = Bandwidth::Fixed(0.5);
        let j2 = serde_json::to_string(&c2).unwrap();
        assert_eq!(serde_json::from_str::<StepperConfig>(&j2).unwrap(), c2);
        assert!(serde_json::from_str::<Bandwidth>("\"mean\"").is_err());
        assert!(serde_json::from_str::<Bandwidth>("-1.0").is_err());
    }
}
