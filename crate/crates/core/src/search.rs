//! Verifier-guided search: best-of-N random search, multi-round noise search
//! and the two-stage combination.
//!
//! Cost is measured in compute units: integrating one trajectory over
//! `[t_start, 1]` costs `1 - t_start`. Verifier calls are free.
//!
//! Stream layout (all relative to the `rng` argument):
//! * random search, candidate `i`: initial noise from `child(i).child(0)`,
//!   integration from `child(i).child(1)`;
//! * noise search, round `r`, kept lineage `c`: batch stream `child(r).child(c)`;
//! * two-stage: stage 1 uses `child(0)`, stage 2 from kept noise `i` uses
//!   `child(1).child(i)`.

use std::cmp::Ordering;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::integrators::{integrate, snap_to_grid, Method, ParticleBatch, Recording, StepperConfig};
use crate::mixture::GaussianMixtureTarget;
use crate::rng::RngStream;
use crate::state::{State, Trajectory};

/// Round start times of the standard noise-search schedule.
pub const STANDARD_ROUND_START_TIMES: [f64; 9] = [0.0, 0.2, 0.4, 0.6, 0.75, 0.8, 0.85, 0.9, 0.95];

const COUNT_SLACK: f64 = 1e-9;

type ScoreFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// A terminal-sample scoring function; higher is better.
#[derive(Clone)]
pub struct Verifier {
    name: String,
    f: ScoreFn,
}

impl fmt::Debug for Verifier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Verifier").field("name", &self.name).finish_non_exhaustive()
    }
}

impl Verifier {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// `r(x) = log p_data(x)`.
pub fn verifier_logdensity(target: &GaussianMixtureTarget) -> Verifier {
    let tg = target.clone();
    Verifier::new("logdensity", move |x| tg.log_density(x).unwrap_or(f64::NAN))
}

/// `r(x)` = posterior responsibility of component `k` under the data density.
pub fn verifier_component_posterior(target: &GaussianMixtureTarget, k: usize) -> Result<Verifier> {
    if k >= target.n_components() {
        return Err(Error::InvalidArgument(format!(
            "component index {k} out of range for a {}-component mixture",
            target.n_components()
        )));
    }
    let tg = target.clone();
    Ok(Verifier::new(format!("component_posterior_{k}"), move |x| {
        tg.responsibilities(x).map_or(f64::NAN, |r| r[k])
    }))
}

/// Noise-search sizing.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchBudget {
    /// Candidates per round (the scaling factor N).
    pub n: usize,
    /// Lineages kept between rounds (K).
    pub keep: usize,
    pub round_start_times: Vec<f64>,
}

impl SearchBudget {
    pub fn new(n: usize, keep: usize, round_start_times: Vec<f64>) -> Result<Self> {
        let b = Self { n, keep, round_start_times };
        b.validate()?;
        Ok(b)
    }

    /// `N` candidates, `K = 1`, the standard start times.
    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, 1, STANDARD_ROUND_START_TIMES.to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.keep == 0 || self.keep > self.n {
            return Err(Error::InvalidArgument(format!("need 1 <= keep <= n, got keep = {}, n = {}", self.keep, self.n)));
        }
        validate_start_times(&self.round_start_times)
    }
}

pub(crate) fn validate_start_times(ts: &[f64]) -> Result<()> {
    if ts.first() != Some(&0.0) {
        return Err(Error::InvalidArgument("round start times must begin at 0.0".into()));
    }
    if ts.windows(2).any(|w| !(w[1] > w[0])) || ts.iter().any(|&t| !(0.0..1.0).contains(&t)) {
        return Err(Error::InvalidArgument("round start times must increase strictly within [0, 1)".into()));
    }
    Ok(())
}

/// Start times snapped down to the `n_steps` grid, duplicates removed.
pub fn snapped_start_times(ts: &[f64], n_steps: usize) -> Vec<f64> {
    let mut out: Vec<f64> = ts.iter().map(|&t| snap_to_grid(t, n_steps)).collect();
    out.dedup();
    out
}

/// Cost of one noise-search pass of a single candidate: `sum_i (1 - s_i)`.
pub fn pass_cost(snapped: &[f64]) -> f64 {
    snapped.iter().map(|s| 1.0 - s).sum()
}

/// One step of a winner's ancestry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LineageStep {
    pub round: usize,
    /// Index of the kept lineage the candidate branched from.
    pub parent: usize,
    /// Candidate index within its batch.
    pub candidate: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub x: Vec<f64>,
    pub score: f64,
    /// Initial noise the candidate's lineage started from.
    pub origin: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SearchOutcome {
    /// Top-K candidates, best first.
    pub selected: Vec<Candidate>,
    pub per_round_best: Vec<(usize, f64)>,
    pub compute_units: f64,
    /// Ancestry of each selected candidate, aligned with `selected`.
    pub trajectory_ids: Vec<Vec<LineageStep>>,
}

impl SearchOutcome {
    pub fn best(&self) -> &Candidate {
        &self.selected[0]
    }
}

/// Indices of the top `k` finite scores, best first, ties to the lowest index.
/// Non-finite scores are dropped with a warning.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len())
        .filter(|&i| {
            let ok = scores[i].is_finite();
            if !ok {
                log::warn!("discarding candidate {i}: verifier returned {}", scores[i]);
            }
            ok
        })
        .collect();
    if idx.is_empty() {
        return Err(Error::NoFiniteCandidates);
    }
    idx.sort_by(|&a, &b| match scores[b].partial_cmp(&scores[a]) {
        Some(Ordering::Equal) | None => a.cmp(&b),
        Some(o) => o,
    });
    idx.truncate(k);
    Ok(idx)
}

/// Best-of-N over independent initial noises with the deterministic sampler.
pub fn random_search(
    n: usize,
    k: usize,
    stepper: &StepperConfig,
    field: &dyn VectorField,
    verifier: &Verifier,
    rng: &RngStream,
) -> Result<SearchOutcome> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    if stepper.method != Method::Ode {
        return Err(Error::InvalidArgument(format!("random search integrates with ode, not {}", stepper.method)));
    }
    let d = field.dim();
    let cands: Vec<(Vec<f64>, Vec<f64>)> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let x0 = rng.child(i).child(0).standard_normal(d);
            let batch = ParticleBatch::new(vec![x0.clone()], 0.0, i)?;
            let tr = integrate(&batch, stepper, field, &rng.child(i).child(1), &Recording::terminal_only())?;
            Ok((x0, tr[0].terminal().x.clone()))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<f64> = cands.par_iter().map(|(_, x)| verifier.score(x)).collect();
    let winners = top_k(&scores, k)?;
    Ok(SearchOutcome {
        per_round_best: vec![(0, scores[winners[0]])],
        compute_units: n as f64,
        trajectory_ids: winners.iter().map(|&i| vec![LineageStep { round: 0, parent: 0, candidate: i }]).collect(),
        selected: winners
            .iter()
            .map(|&i| Candidate { x: cands[i].1.clone(), score: scores[i], origin: cands[i].0.clone() })
            .collect(),
    })
}

/// One batch integrated during a traced noise search.
#[derive(Clone, Debug)]
pub struct TracedBatch {
    pub parent: State,
    pub stream: RngStream,
    pub trajectories: Vec<Trajectory>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RoundTrace {
    pub round: usize,
    pub start_t: f64,
    pub batches: Vec<TracedBatch>,
    /// `(batch, candidate)` of the kept lineages, best first.
    pub kept: Vec<(usize, usize)>,
}

struct Lineage {
    state: State,
    steps: Vec<LineageStep>,
}

/// Multi-round noise search from `x0` with `budget.n` candidates per kept
/// lineage per round.
pub fn noise_search(
    x0: &State,
    budget: &SearchBudget,
    stepper: &StepperConfig,
    field: &dyn VectorField,
    verifier: &Verifier,
    rng: &RngStream,
) -> Result<SearchOutcome> {
    noise_search_traced(x0, budget, stepper, field, verifier, rng).map(|(o, _)| o)
}

/// [`noise_search`] that also returns every batch it integrated.
pub fn noise_search_traced(
    x0: &State,
    budget: &SearchBudget,
    stepper: &StepperConfig,
    field: &dyn VectorField,
    verifier: &Verifier,
    rng: &RngStream,
) -> Result<(SearchOutcome, Vec<RoundTrace>)> {
    budget.validate()?;
    let starts = round_starts(x0.t, &budget.round_start_times, stepper.n_steps);
    let sizes = vec![budget.n; starts.len()];
    run_noise_search(x0, &starts, &sizes, budget.keep, stepper, field, verifier, rng)
}

fn round_starts(t0: f64, nominal: &[f64], n_steps: usize) -> Vec<f64> {
    let mut starts = vec![t0];
    starts.extend(snapped_start_times(nominal, n_steps).into_iter().filter(|&s| s > t0));
    starts
}

#[allow(clippy::too_many_arguments)]
fn run_noise_search(
    x0: &State,
    starts: &[f64],
    sizes: &[usize],
    keep: usize,
    stepper: &StepperConfig,
    field: &dyn VectorField,
    verifier: &Verifier,
    rng: &RngStream,
) -> Result<(SearchOutcome, Vec<RoundTrace>)> {
    if !stepper.method.is_stochastic() {
        return Err(Error::InvalidArgument("noise search needs a stochastic method".into()));
    }
    let origin = x0.x.clone();
    let mut kept = vec![Lineage { state: x0.clone(), steps: Vec::new() }];
    let mut per_round_best = Vec::with_capacity(starts.len());
    let mut traces = Vec::with_capacity(starts.len());
    let mut compute = 0.0;

    for (r, &start) in starts.iter().enumerate() {
        let next = starts.get(r + 1).copied();
        let recording = Recording::Checkpoints(next.into_iter().collect());
        let mut batches = Vec::with_capacity(kept.len());
        for (c, lin) in kept.iter().enumerate() {
            let batch = ParticleBatch::replicate(&lin.state.x, sizes[r], start, c as u64)?;
            let stream = rng.child(r as u64).child(c as u64);
            let trajectories = integrate(&batch, stepper, field, &stream, &recording)?;
            compute += sizes[r] as f64 * (1.0 - start);
            let scores = trajectories.par_iter().map(|tr| verifier.score(&tr.terminal().x)).collect();
            batches.push(TracedBatch { parent: lin.state.clone(), stream, trajectories, scores });
        }

        let flat: Vec<(usize, usize)> =
            batches.iter().enumerate().flat_map(|(b, tb)| (0..tb.scores.len()).map(move |j| (b, j))).collect();
        let flat_scores: Vec<f64> = flat.iter().map(|&(b, j)| batches[b].scores[j]).collect();
        let winners: Vec<(usize, usize)> = top_k(&flat_scores, keep)?.into_iter().map(|i| flat[i]).collect();
        per_round_best.push((r, batches[winners[0].0].scores[winners[0].1]));
        let lineage_of = |b: usize, j: usize| {
            let mut steps = kept[b].steps.clone();
            steps.push(LineageStep { round: r, parent: b, candidate: j });
            steps
        };

        match next {
            None => {
                let outcome = SearchOutcome {
                    selected: winners
                        .iter()
                        .map(|&(b, j)| Candidate {
                            x: batches[b].trajectories[j].terminal().x.clone(),
                            score: batches[b].scores[j],
                            origin: origin.clone(),
                        })
                        .collect(),
                    trajectory_ids: winners.iter().map(|&(b, j)| lineage_of(b, j)).collect(),
                    per_round_best,
                    compute_units: compute,
                };
                traces.push(RoundTrace { round: r, start_t: start, batches, kept: winners });
                return Ok((outcome, traces));
            }
            Some(t_next) => {
                let new_kept = winners
                    .iter()
                    .map(|&(b, j)| {
                        let state = batches[b].trajectories[j]
                            .state_at(t_next)
                            .cloned()
                            .ok_or(Error::OffGrid { t: t_next, n_steps: stepper.n_steps })?;
                        Ok(Lineage { state, steps: lineage_of(b, j) })
                    })
                    .collect::<Result<Vec<_>>>()?;
                traces.push(RoundTrace { round: r, start_t: start, batches, kept: winners });
                kept = new_kept;
            }
        }
    }
    Err(Error::InvalidArgument("noise search needs at least one round".into()))
}

/// Settings of the two-stage search.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoStageBudget {
    /// Total compute units.
    pub total: f64,
    /// Fraction of `total` spent on random search.
    pub split: f64,
    pub keep: usize,
    pub round_start_times: Vec<f64>,
}

/// How a [`TwoStageBudget`] is spent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TwoStagePlan {
    /// Random-search candidates.
    pub n1: usize,
    /// Noise-search candidates per round for each kept noise.
    pub n2: usize,
    /// Additional candidates in the final round, spending the remainder.
    pub extra_final: usize,
    pub starts: Vec<f64>,
}

impl TwoStageBudget {
    pub fn plan(&self, n_steps: usize) -> Result<TwoStagePlan> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.keep == 0 {
            return Err(Error::InvalidArgument("keep must be at least 1".into()));
        }
        validate_start_times(&self.round_start_times)?;
        let starts = snapped_start_times(&self.round_start_times, n_steps);
        let n1 = ((self.split * self.total + COUNT_SLACK).floor().max(0.0) as usize).max(self.keep);
        let per_x0 = (self.total - n1 as f64) / self.keep as f64;
        let cost = pass_cost(&starts);
        let n2 = (per_x0 / cost + COUNT_SLACK).floor().max(0.0) as usize;
        if n2 == 0 {
            return Err(Error::BudgetTooSmall(format!(
                "{} units leave {per_x0} per kept noise, one noise-search pass costs {cost}",
                self.total
            )));
        }
        let leftover = per_x0 - n2 as f64 * cost;
        let last = 1.0 - starts[starts.len() - 1];
        let extra_final = (leftover / last + COUNT_SLACK).floor().max(0.0) as usize;
        Ok(TwoStagePlan { n1, n2, extra_final, starts })
    }
}

/// Random search for the initial noises, then noise search from each of the
/// `keep` best.
pub fn rs_plus_ns(
    budget: &TwoStageBudget,
    stepper_rs: &StepperConfig,
    stepper_ns: &StepperConfig,
    field: &dyn VectorField,
    verifier: &Verifier,
    rng: &RngStream,
) -> Result<SearchOutcome> {
    let plan = budget.plan(stepper_ns.n_steps)?;
    let stage1 = random_search(plan.n1, budget.keep, stepper_rs, field, verifier, &rng.child(0))?;
    let mut sizes = vec![plan.n2; plan.starts.len()];
    *sizes.last_mut().expect("at least one round") += plan.extra_final;

    let mut compute = stage1.compute_units;
    let mut per_round_best = stage1.per_round_best.clone();
    let mut pool: Vec<(Candidate, Vec<LineageStep>)> = Vec::new();
    for (i, seed) in stage1.selected.iter().enumerate() {
        let x0 = State::new(seed.origin.clone(), 0.0)?;
        let (out, _) =
            run_noise_search(&x0, &plan.starts, &sizes, budget.keep, stepper_ns, field, verifier, &rng.child(1).child(i as u64))?;
        compute += out.compute_units;
        for &(r, s) in &out.per_round_best {
            match per_round_best.get_mut(r + 1) {
                Some(e) if e.1 >= s => {}
                Some(e) => e.1 = s,
                None => per_round_best.push((r + 1, s)),
            }
        }
        pool.extend(out.selected.into_iter().zip(out.trajectory_ids));
    }
    let scores: Vec<f64> = pool.iter().map(|(c, _)| c.score).collect();
    let winners = top_k(&scores, budget.keep)?;
    Ok(SearchOutcome {
        selected: winners.iter().map(|&w| pool[w].0.clone()).collect(),
        trajectory_ids: winners.iter().map(|&w| pool[w].1.clone()).collect(),
        per_round_best,
        compute_units: compute,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::AnalyticField;

    fn gauss2() -> GaussianMixtureTarget {
        GaussianMixtureTarget::single_gaussian(vec![0.0, 0.0], 1.0).unwrap()
    }

    #[test]
    fn top_k_ties_and_nan() {
        assert_eq!(top_k(&[0.1, 0.9, 0.5, 0.3], 1).unwrap(), vec![1]);
        assert_eq!(top_k(&[0.5, 0.9, 0.9, 0.3], 2).unwrap(), vec![1, 2]);
        assert_eq!(top_k(&[f64::NAN, 0.2, f64::INFINITY], 3).unwrap(), vec![1]);
        assert!(matches!(top_k(&[f64::NAN], 1), Err(Error::NoFiniteCandidates)));
    }

    #[test]
    fn verifier_examples() {
        let g = GaussianMixtureTarget::single_gaussian(vec![1.0, -1.0], 0.5).unwrap();
        let v = verifier_logdensity(&g);
        assert!(v.score(&[1.0, -1.0]) > v.score(&[1.01, -1.0]));
        let far = v.score(&[1e3, 0.0]);
        assert!(far.is_finite() && far < -1e5);
        let mix = GaussianMixtureTarget::two_component_2d();
        let v = verifier_logdensity(&mix);
        // both components contribute 0.5 N(0; +-2, 0.5) at the origin
        let expect = (1.0 / (2.0 * std::f64::consts::PI * 0.5)).ln() - 4.0;
        assert!((v.score(&[0.0, 0.0]) - expect).abs() < 1e-12);
        let p = verifier_component_posterior(&mix, 1).unwrap();
        assert!((p.score(&[0.0, 3.0]) - 0.5).abs() < 1e-15);
        assert!(p.score(&[2.0, 0.0]) > 0.999_999);
        assert!(verifier_component_posterior(&mix, 2).is_err());
        assert_eq!(verifier_component_posterior(&g, 0).unwrap().score(&[5.0, 5.0]), 1.0);
    }

    #[test]
    fn random_search_n1_returns_its_sample() {
        let f = AnalyticField::new(gauss2());
        let v = verifier_logdensity(f.target());
        let out = random_search(1, 1, &StepperConfig::ode(20), &f, &v, &RngStream::new(4)).unwrap();
        assert_eq!(out.selected.len(), 1);
        assert_eq!(out.compute_units, 1.0);
        assert!(random_search(1, 1, &StepperConfig::new(Method::Sde, 20), &f, &v, &RngStream::new(4)).is_err());
        assert!(random_search(2, 3, &StepperConfig::ode(20), &f, &v, &RngStream::new(4)).is_err());
    }

    #[test]
    fn noise_search_accounting() {
        let f = AnalyticField::new(gauss2());
        let v = verifier_logdensity(f.target());
        let cfg = StepperConfig::new(Method::DmfmOde, 20);
        let x0 = State::new(vec![0.2, -0.1], 0.0).unwrap();
        let out = noise_search(&x0, &SearchBudget::standard(4).unwrap(), &cfg, &f, &v, &RngStream::new(2)).unwrap();
        assert_eq!(out.per_round_best.len(), 9);
        let expect = 4.0 * pass_cost(&snapped_start_times(&STANDARD_ROUND_START_TIMES, 20));
        assert!((out.compute_units - expect).abs() < 1e-12);
        assert!((pass_cost(&snapped_start_times(&STANDARD_ROUND_START_TIMES, 20)) - 3.55).abs() < 1e-12);
        assert_eq!(out.trajectory_ids[0].len(), 9);
    }

    #[test]
    fn noise_search_zero_noise_is_ode() {
        let f = AnalyticField::new(GaussianMixtureTarget::two_component_2d());
        let v = verifier_logdensity(f.target());
        let x0 = State::new(vec![0.7, 0.3], 0.0).unwrap();
        let b = ParticleBatch::new(vec![x0.x.clone()], 0.0, 0).unwrap();
        let ode = crate::integrators::sample_terminals(&b, &StepperConfig::ode(20), &f, &RngStream::new(0)).unwrap();
        for m in [Method::Sde, Method::DmfmOde, Method::EdmSde] {
            let cfg = StepperConfig::new(m, 20).with_noise_scale(0.0);
            let out = noise_search(&x0, &SearchBudget::standard(3).unwrap(), &cfg, &f, &v, &RngStream::new(9)).unwrap();
            assert_eq!(out.best().x, ode[0]);
        }
    }

    #[test]
    fn two_stage_plan_spends_budget() {
        for (total, n1, n2, extra) in [(8.0, 4, 1, 9), (16.0, 8, 2, 18), (32.0, 16, 4, 36), (64.0, 32, 9, 1)] {
            let b = TwoStageBudget { total, split: 0.5, keep: 1, round_start_times: STANDARD_ROUND_START_TIMES.to_vec() };
            let p = b.plan(20).unwrap();
            assert_eq!((p.n1, p.n2, p.extra_final), (n1, n2, extra), "total {total}");
        }
        let small = TwoStageBudget { total: 4.0, split: 0.5, keep: 1, round_start_times: STANDARD_ROUND_START_TIMES.to_vec() };
        assert!(matches!(small.plan(20), Err(Error::BudgetTooSmall(_))));
    }

    #[test]
    fn two_stage_compute_is_exact() {
        let f = AnalyticField::new(gauss2());
        let v = verifier_logdensity(f.target());
        let b = TwoStageBudget { total: 16.0, split: 0.5, keep: 1, round_start_times: STANDARD_ROUND_START_TIMES.to_vec() };
        let out = rs_plus_ns(&b, &StepperConfig::ode(20), &StepperConfig::new(Method::DmfmOde, 20), &f, &v, &RngStream::new(1))
            .unwrap();
        assert!((out.compute_units - 16.0).abs() < 1e-9, "{}", out.compute_units);
        assert_eq!(out.per_round_best.len(), 10);
    }
}
