//! Self-checks of the numerical identities the samplers rely on.

use std::fmt;

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::Result;
use crate::fields::{score_from_velocity_clamped, AnalyticField, VectorField, DEFAULT_T_CLAMP};
use crate::integrators::score_orth_project;
use crate::metrics::{continuity_residual_check, ContinuityConfig};
use crate::mixture::GaussianMixtureTarget;
use crate::rng::RngStream;
use crate::schedule::{validate_schedule, ScheduleTriple};

pub const ORTHOGONALITY_TOL: f64 = 1e-10;
pub const SCORE_IDENTITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize)]
pub struct VerifyConfig {
    pub t_clamp: f64,
    /// Feed the raw noise into the divergence check instead of its projection.
    pub unprojected: bool,
    pub n_probes: usize,
    pub identity_t: usize,
    pub identity_x: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { t_clamp: DEFAULT_T_CLAMP, unprojected: false, n_probes: 10_000, identity_t: 10, identity_x: 100, seed: 0 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub detail: Value,
    pub error: Option<String>,
}

impl SuiteResult {
    fn from_result(name: &str, r: Result<(bool, Value)>) -> Self {
        match r {
            Ok((passed, detail)) => Self { name: name.into(), passed, detail, error: None },
            Err(e) => Self { name: name.into(), passed: false, detail: Value::Null, error: Some(e.to_string()) },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.suites {
            let status = if s.passed { "PASS" } else { "FAIL" };
            match &s.error {
                Some(e) => writeln!(f, "{status} {}: {e}", s.name)?,
                None => writeln!(f, "{status} {}: {}", s.name, s.detail)?,
            }
        }
        write!(f, "{}", if self.passed { "all suites passed" } else { "verification failed" })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// `|<w, s>| <= 1e-10 |w| |s|` on random `(x, t, eps)`.
pub fn orthogonality_suite(target: &GaussianMixtureTarget, cfg: &VerifyConfig) -> Result<(bool, Value)> {
    let field = AnalyticField::new(target.clone()).with_t_clamp(cfg.t_clamp);
    let stream = RngStream::new(cfg.seed).child(1);
    let mut rng = stream.generator();
    let d = target.dim();
    let (mut worst, mut failures, mut degenerate) = (0.0_f64, 0usize, 0usize);
    for i in 0..cfg.n_probes {
        let t: f64 = rng.random::<f64>() * (1.0 - cfg.t_clamp);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let eps = stream.child(i as u64).standard_normal(d);
        let s = field.score(&x, t)?;
        let w = score_orth_project(&eps, &s);
        let scale = norm(&w) * norm(&s);
        if norm(&s) < crate::integrators::DEGENERATE_SCORE_NORM {
            degenerate += 1;
            continue;
        }
        let inner: f64 = w.iter().zip(&s).map(|(a, b)| a * b).sum();
        let ratio = if scale > 0.0 { inner.abs() / scale } else { 0.0 };
        worst = worst.max(ratio);
        if inner.abs() > ORTHOGONALITY_TOL * scale {
            failures += 1;
        }
    }
    Ok((
        failures == 0,
        json!({"probes": cfg.n_probes, "failures": failures, "degenerate": degenerate,
               "max_relative_inner_product": worst, "tolerance": ORTHOGONALITY_TOL}),
    ))
}

/// Score recovered from the analytic velocity against the analytic score on
/// a grid of `identity_t` times in `[t_clamp, 1 - t_clamp]` and `identity_x`
/// random points.
pub fn score_identity_suite(target: &GaussianMixtureTarget, cfg: &VerifyConfig) -> Result<(bool, Value)> {
    let field = AnalyticField::new(target.clone()).with_t_clamp(cfg.t_clamp);
    let lin = ScheduleTriple::linear();
    let mut rng = RngStream::new(cfg.seed).child(2).generator();
    let d = target.dim();
    let (lo, hi) = (cfg.t_clamp, 1.0 - cfg.t_clamp);
    let nt = cfg.identity_t.max(2);
    let (mut worst, mut failures) = (0.0_f64, 0usize);
    for i in 0..nt {
        let t = lo + (hi - lo) * i as f64 / (nt - 1) as f64;
        for _ in 0..cfg.identity_x {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let u = field.velocity(&x, t)?;
            let a = score_from_velocity_clamped(&u, &x, t, &lin, cfg.t_clamp)?;
            let b = field.score(&x, t)?;
            let diff: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
            let rel = norm(&diff) / norm(&b).max(1.0);
            worst = worst.max(rel);
            if rel > SCORE_IDENTITY_TOL {
                failures += 1;
            }
        }
    }
    Ok((
        failures == 0,
        json!({"points": nt * cfg.identity_x, "failures": failures, "max_relative_error": worst,
               "tolerance": SCORE_IDENTITY_TOL, "t_range": [lo, hi]}),
    ))
}

pub fn continuity_suite(target: &GaussianMixtureTarget, cfg: &VerifyConfig) -> Result<(bool, Value)> {
    let ccfg = ContinuityConfig { unprojected: cfg.unprojected, ..Default::default() };
    let r = continuity_residual_check(target, &ccfg)?;
    Ok((r.passed(), serde_json::to_value(&r).expect("report serializes")))
}

pub fn schedule_suite() -> Result<(bool, Value)> {
    let reports: Vec<_> = [ScheduleTriple::linear(), ScheduleTriple::vp_trig()]
        .iter()
        .map(|s| validate_schedule(s, 99))
        .collect();
    let passed = reports.iter().all(|r| r.passed());
    Ok((passed, serde_json::to_value(&reports).expect("reports serialize")))
}

/// Run all four suites; failures are recorded, not raised.
pub fn verify_math(target: &GaussianMixtureTarget, cfg: &VerifyConfig) -> VerifyReport {
    let suites = vec![
        SuiteResult::from_result("orthogonality", orthogonality_suite(target, cfg)),
        SuiteResult::from_result("score_identity", score_identity_suite(target, cfg)),
        SuiteResult::from_result("continuity", continuity_suite(target, cfg)),
        SuiteResult::from_result("schedules", schedule_suite()),
    ];
    VerifyReport { passed: suites.iter().all(|s| s.passed), suites }
}
