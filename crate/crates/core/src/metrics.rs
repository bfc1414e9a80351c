//! Diversity, two-sample distance, Pareto extraction and finite-difference
//! checks of the continuity equation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::fields::{AnalyticField, VectorField};
use crate::integrators::score_orth_project;
use crate::mixture::GaussianMixtureTarget;
use crate::rng::RngStream;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean pairwise Euclidean distance within each group.
pub fn group_diversities(groups: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    groups
        .iter()
        .map(|g| {
            if g.len() < 2 {
                return Err(Error::InvalidArgument(format!("diversity needs groups of at least 2, got {}", g.len())));
            }
            let mut sum = 0.0;
            for i in 0..g.len() {
                for j in i + 1..g.len() {
                    check_dim(g[i].len(), g[j].len())?;
                    sum += dist(&g[i], &g[j]);
                }
            }
            Ok(sum / (g.len() * (g.len() - 1) / 2) as f64)
        })
        .collect()
}

/// Mean over groups of [`group_diversities`].
pub fn batch_diversity(groups: &[Vec<Vec<f64>>]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::InvalidArgument("diversity needs at least one group".into()));
    }
    let d = group_diversities(groups)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Sum over unordered pairs of `|x_i - x_j|` for sorted `x`.
fn sorted_pair_sum(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter().enumerate().map(|(k, v)| v * (2.0 * k as f64 - n + 1.0)).sum()
}

/// Sum over all `(i, j)` of `|a_i - b_j|` for sorted `b`.
fn cross_sum_1d(a: &[f64], b: &[f64]) -> f64 {
    let mut prefix = Vec::with_capacity(b.len() + 1);
    prefix.push(0.0);
    for v in b {
        prefix.push(prefix.last().unwrap() + v);
    }
    let total = prefix[b.len()];
    let m = b.len() as f64;
    a.iter()
        .map(|&x| {
            let k = b.partition_point(|&v| v < x);
            let below = prefix[k];
            x * k as f64 - below + (total - below) - x * (m - k as f64)
        })
        .sum()
}

fn within_mean(a: &[Vec<f64>]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let s: f64 = (0..n).into_par_iter().map(|i| (i + 1..n).map(|j| dist(&a[i], &a[j])).sum::<f64>()).sum();
    s / (n * (n - 1) / 2) as f64
}

/// Unbiased energy distance `2 E|A - B| - E|A - A'| - E|B - B'|`, with the
/// diagonal excluded from the within-sample terms.
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("energy distance needs nonempty samples".into()));
    }
    let d = a[0].len();
    for x in a.iter().chain(b) {
        check_dim(d, x.len())?;
    }
    let (n, m) = (a.len() as f64, b.len() as f64);
    if d == 1 {
        let mut xa: Vec<f64> = a.iter().map(|x| x[0]).collect();
        let mut xb: Vec<f64> = b.iter().map(|x| x[0]).collect();
        xa.sort_by(f64::total_cmp);
        xb.sort_by(f64::total_cmp);
        let aa = if a.len() > 1 { sorted_pair_sum(&xa) / (n * (n - 1.0) / 2.0) } else { 0.0 };
        let bb = if b.len() > 1 { sorted_pair_sum(&xb) / (m * (m - 1.0) / 2.0) } else { 0.0 };
        let ab = cross_sum_1d(&xa, &xb) / (n * m);
        return Ok(2.0 * ab - aa - bb);
    }
    let ab: f64 = a.par_iter().map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>()).sum::<f64>() / (n * m);
    Ok(2.0 * ab - within_mean(a) - within_mean(b))
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Clone, Debug, Serialize)]
pub struct NullCalibration {
    pub n: usize,
    pub reps: usize,
    pub quantile: f64,
    pub threshold: f64,
    pub values: Vec<f64>,
}

/// Same-distribution null of the energy distance: `reps` pairs of `n`-point
/// draws from `target`; the threshold is the `q` quantile.
pub fn calibrate_null(target: &GaussianMixtureTarget, n: usize, reps: usize, q: f64, rng: &RngStream) -> Result<NullCalibration> {
    if n == 0 || reps == 0 {
        return Err(Error::InvalidArgument("calibration needs n, reps >= 1".into()));
    }
    let values = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let s = rng.child(r);
            energy_distance(&target.sample(n, &s.child(0)), &target.sample(n, &s.child(1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NullCalibration { n, reps, quantile: q, threshold: quantile(&values, q), values })
}

/// One (method, noise magnitude) cell of the diversity/quality study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub method: String,
    pub noise_magnitude: f64,
    pub diversity: f64,
    /// Negative energy distance to direct target draws.
    pub quality: f64,
    pub n_samples: usize,
}

fn dominates(q: &FrontierPoint, p: &FrontierPoint) -> bool {
    q.diversity >= p.diversity && q.quality >= p.quality && (q.diversity > p.diversity || q.quality > p.quality)
}

/// Non-dominated points under (diversity, quality), equal points kept once,
/// ordered by diversity ascending.
pub fn pareto_frontier(points: &[FrontierPoint]) -> Vec<FrontierPoint> {
    let mut out: Vec<FrontierPoint> = Vec::new();
    for p in points {
        if points.iter().any(|q| dominates(q, p)) {
            continue;
        }
        if out.iter().any(|q| q.diversity == p.diversity && q.quality == p.quality) {
            continue;
        }
        out.push(p.clone());
    }
    out.sort_by(|a, b| a.diversity.total_cmp(&b.diversity));
    out
}

/// Grids and tolerances for [`continuity_residual_check`].
#[derive(Clone, Debug, Serialize)]
pub struct ContinuityConfig {
    pub h: f64,
    pub x_range: (f64, f64),
    pub n_x: usize,
    pub t_range: (f64, f64),
    pub n_t: usize,
    pub continuity_tol: f64,
    pub div_t: f64,
    pub div_range: (f64, f64),
    pub div_n: usize,
    pub div_eps: Vec<f64>,
    /// Points where the score norm falls below this are skipped.
    pub div_min_score: f64,
    pub div_tol: f64,
    /// Use `w = eps` instead of the projected field.
    pub unprojected: bool,
}

impl Default for ContinuityConfig {
    fn default() -> Self {
        Self {
            h: 1e-3,
            x_range: (-5.0, 5.0),
            n_x: 41,
            t_range: (0.05, 0.95),
            n_t: 10,
            continuity_tol: 1e-4,
            div_t: 0.5,
            div_range: (-3.0, 3.0),
            div_n: 41,
            div_eps: vec![0.7, -1.3],
            div_min_score: 0.1,
            div_tol: 1e-3,
            unprojected: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityReport {
    /// Max over the grid of `|dp/dt + div(p u)|`.
    pub continuity_max_residual: f64,
    pub continuity_points: usize,
    pub continuity_passed: bool,
    /// Max relative error of `div(p w) = p div(w)`; `None` for targets that are not 2-d.
    pub divergence_max_rel_error: Option<f64>,
    pub divergence_points: usize,
    pub divergence_worst_point: Option<Vec<f64>>,
    pub divergence_passed: bool,
    pub unprojected: bool,
}

impl ContinuityReport {
    pub fn passed(&self) -> bool {
        self.continuity_passed && self.divergence_passed
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid_points(lo: f64, hi: f64, n: usize, d: usize) -> Vec<Vec<f64>> {
    let axis = linspace(lo, hi, n);
    let mut pts = vec![Vec::new()];
    for _ in 0..d {
        pts = pts.into_iter().flat_map(|p| axis.iter().map(move |&v| [p.clone(), vec![v]].concat())).collect();
    }
    pts
}

fn shifted(x: &[f64], i: usize, dh: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    y[i] += dh;
    y
}

/// Finite-difference checks of `dp/dt + div(p u) = 0` for the analytic field
/// and of `div(p w) = p div(w)` for the score-orthogonal perturbation
/// `w = Pi_{perp s}[eps]` with fixed `eps`.
pub fn continuity_residual_check(target: &GaussianMixtureTarget, cfg: &ContinuityConfig) -> Result<ContinuityReport> {
    let d = target.dim();
    if d > 2 {
        return Err(Error::InvalidArgument(format!("continuity check supports 1-d and 2-d targets, got {d}")));
    }
    let field = AnalyticField::new(target.clone());
    let h = cfg.h;
    let p = |x: &[f64], t: f64| target.log_density_at(x, t).map(f64::exp);

    let xs = grid_points(cfg.x_range.0, cfg.x_range.1, cfg.n_x, d);
    let ts = linspace(cfg.t_range.0, cfg.t_range.1, cfg.n_t);
    let cells: Vec<(f64, &Vec<f64>)> = ts.iter().flat_map(|&t| xs.iter().map(move |x| (t, x))).collect();
    let residuals = cells
        .par_iter()
        .map(|&(t, x)| {
            let dpdt = (p(x, t + h)? - p(x, t - h)?) / (2.0 * h);
            let mut div = 0.0;
            for i in 0..d {
                let (xp, xm) = (shifted(x, i, h), shifted(x, i, -h));
                let fp = p(&xp, t)? * field.velocity(&xp, t)?[i];
                let fm = p(&xm, t)? * field.velocity(&xm, t)?[i];
                div += (fp - fm) / (2.0 * h);
            }
            Ok((dpdt + div).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    let continuity_max_residual = residuals.iter().cloned().fold(0.0, f64::max);

    let mut report = ContinuityReport {
        continuity_max_residual,
        continuity_points: residuals.len(),
        continuity_passed: continuity_max_residual <= cfg.continuity_tol,
        divergence_max_rel_error: None,
        divergence_points: 0,
        divergence_worst_point: None,
        divergence_passed: true,
        unprojected: cfg.unprojected,
    };
    if d != 2 {
        return Ok(report);
    }
    check_dim(2, cfg.div_eps.len())?;

    let t = cfg.div_t;
    let w = |x: &[f64]| -> Result<Vec<f64>> {
        if cfg.unprojected {
            Ok(cfg.div_eps.clone())
        } else {
            Ok(score_orth_project(&cfg.div_eps, &field.score(x, t)?))
        }
    };
    let pts = grid_points(cfg.div_range.0, cfg.div_range.1, cfg.div_n, 2);
    let errs = pts
        .par_iter()
        .map(|x| {
            let s = field.score(x, t)?;
            let sn = s.iter().map(|c| c * c).sum::<f64>().sqrt();
            if sn < cfg.div_min_score {
                return Ok(None);
            }
            let (mut div_pw, mut div_w) = (0.0, 0.0);
            for i in 0..2 {
                let (xp, xm) = (shifted(x, i, h), shifted(x, i, -h));
                let (wp, wm) = (w(&xp)?[i], w(&xm)?[i]);
                div_pw += (p(&xp, t)? * wp - p(&xm, t)? * wm) / (2.0 * h);
                div_w += (wp - wm) / (2.0 * h);
            }
            let px = p(x, t)?;
            let w0 = w(x)?;
            let wn = w0.iter().map(|c| c * c).sum::<f64>().sqrt();
            let scale = px * (div_w.abs() + wn * sn);
            let err = if scale > 0.0 { (div_pw - px * div_w).abs() / scale } else { 0.0 };
            Ok(Some((err, x.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst: Option<(f64, Vec<f64>)> = None;
    let mut count = 0;
    for (e, x) in errs.into_iter().flatten() {
        count += 1;
        if worst.as_ref().map_or(true, |(we, _)| e > *we) {
            worst = Some((e, x));
        }
    }
    let max_err = worst.as_ref().map_or(0.0, |(e, _)| *e);
    report.divergence_max_rel_error = Some(max_err);
    report.divergence_points = count;
    report.divergence_worst_point = worst.map(|(_, x)| x);
    report.divergence_passed = max_err <= cfg.div_tol;
    Ok(report)
}
