//! Experiment configuration.
//!
//! Configs are TOML documents. Every section except `[target]` is optional and
//! unknown keys are rejected. A run manifest (`manifest.json`) is also accepted:
//! its `config` member holds the fully resolved config of the run.
//!
//! ```toml
//! seeds = [0, 1, 2]
//! output_dir = "out"
//! emit = ["csv", "json", "plotdata"]
//!
//! [target]
//! preset = "two_component_2d"      # or "single_gaussian" with mean/variance
//!
//! [stepper]
//! method = "dmfm_ode"
//! n_steps = 20
//! noise_scale = 0.9
//!
//! [search]
//! algorithm = "noise_search"       # random_search | noise_search | rs_plus_ns
//! scaling_factors = [1, 2, 4, 8]
//! verifier = "logdensity"          # or { component_posterior = 1 }
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::integrators::{Bandwidth, Method, Profile, StepperConfig};
use crate::mixture::{Component, GaussianMixtureTarget};
use crate::search::{validate_start_times, verifier_component_posterior, verifier_logdensity, Verifier, STANDARD_ROUND_START_TIMES};
use crate::verify::VerifyConfig;

/// A config that could not be read, parsed or validated.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub message: String,
    /// 1-based line and column of the offending text, when known.
    pub location: Option<(usize, usize)>,
    /// Dotted path of the offending key, when known.
    pub field: Option<String>,
    pub source_name: Option<String>,
}

impl ConfigError {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self { message: message.into(), location: None, field: Some(field.into()), source_name: None }
    }

    fn with_source(mut self, name: &str) -> Self {
        self.source_name = Some(name.into());
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = &self.source_name {
            write!(f, "{s}:")?;
        }
        if let Some((l, c)) = self.location {
            write!(f, "{l}:{c}:")?;
        }
        if self.source_name.is_some() || self.location.is_some() {
            f.write_str(" ")?;
        }
        if let Some(k) = &self.field {
            write!(f, "`{k}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    #[serde(rename = "two_component_2d")]
    TwoComponent2d,
    SingleGaussian,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    /// Mean of the `single_gaussian` preset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec<f64>>,
    /// Isotropic variance of the `single_gaussian` preset (default 1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<Component>>,
}

impl TargetSpec {
    pub fn resolve(&self) -> Result<GaussianMixtureTarget, ConfigError> {
        let err = |f: &str, e: crate::Error| ConfigError::invalid(f, e.to_string());
        match (self.preset, &self.components) {
            (Some(_), Some(_)) => Err(ConfigError::invalid("target", "give either `preset` or `components`, not both")),
            (None, None) => Err(ConfigError::invalid("target", "missing `preset` or `components`")),
            (None, Some(c)) => {
                if self.mean.is_some() || self.variance.is_some() {
                    return Err(ConfigError::invalid("target", "`mean`/`variance` only apply to the single_gaussian preset"));
                }
                GaussianMixtureTarget::from_components(c).map_err(|e| err("target.components", e))
            }
            (Some(Preset::TwoComponent2d), None) => {
                if self.mean.is_some() || self.variance.is_some() {
                    return Err(ConfigError::invalid("target", "the two_component_2d preset takes no parameters"));
                }
                Ok(GaussianMixtureTarget::two_component_2d())
            }
            (Some(Preset::SingleGaussian), None) => {
                let mean = self.mean.clone().ok_or_else(|| ConfigError::invalid("target.mean", "required by single_gaussian"))?;
                GaussianMixtureTarget::single_gaussian(mean, self.variance.unwrap_or(1.0)).map_err(|e| err("target", e))
            }
        }
    }

    /// The explicit component form of a resolved target.
    pub fn explicit(target: &GaussianMixtureTarget) -> Self {
        Self { components: Some(target.components()), ..Default::default() }
    }
}

/// Stepper settings; omitted fields take the defaults of the chosen method.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepperSpec {
    pub method: Option<Method>,
    pub n_steps: Option<usize>,
    pub noise_scale: Option<f64>,
    pub beta_schedule: Option<Profile>,
    pub g_schedule: Option<Profile>,
    pub eta: Option<f64>,
    pub alpha_envelope: Option<(f64, f64)>,
    pub kernel_bandwidth: Option<Bandwidth>,
}

impl StepperSpec {
    pub fn resolve(&self, default_method: Method) -> Result<StepperConfig, ConfigError> {
        let method = self.method.unwrap_or(default_method);
        let mut c = StepperConfig::new(method, self.n_steps.unwrap_or(20));
        if let Some(v) = self.noise_scale {
            c.noise_scale = v;
        }
        if let Some(v) = self.beta_schedule {
            c.beta_schedule = v;
        }
        if let Some(v) = self.g_schedule {
            c.g_schedule = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.alpha_envelope {
            c.alpha_envelope = v;
        }
        if let Some(v) = self.kernel_bandwidth {
            c.kernel_bandwidth = v;
        }
        c.validate().map_err(|e| ConfigError::invalid("stepper", e.to_string()))?;
        Ok(c)
    }

    pub fn explicit(c: &StepperConfig) -> Self {
        Self {
            method: Some(c.method),
            n_steps: Some(c.n_steps),
            noise_scale: Some(c.noise_scale),
            beta_schedule: Some(c.beta_schedule),
            g_schedule: Some(c.g_schedule),
            eta: Some(c.eta),
            alpha_envelope: Some(c.alpha_envelope),
            kernel_bandwidth: Some(c.kernel_bandwidth),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleSpec {
    /// Groups per seed; each group shares one initial noise.
    pub n_groups: usize,
    pub group_size: usize,
}

impl Default for SampleSpec {
    fn default() -> Self {
        Self { n_groups: 4, group_size: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    RandomSearch,
    NoiseSearch,
    RsPlusNs,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::RandomSearch => "random_search",
            Algorithm::NoiseSearch => "noise_search",
            Algorithm::RsPlusNs => "rs_plus_ns",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifierSpec {
    Logdensity,
    ComponentPosterior(usize),
}

impl VerifierSpec {
    pub fn build(&self, target: &GaussianMixtureTarget) -> Result<Verifier, ConfigError> {
        match *self {
            VerifierSpec::Logdensity => Ok(verifier_logdensity(target)),
            VerifierSpec::ComponentPosterior(k) => {
                verifier_component_posterior(target, k).map_err(|e| ConfigError::invalid("search.verifier", e.to_string()))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpec {
    pub algorithm: Algorithm,
    pub scaling_factors: Vec<usize>,
    pub keep: usize,
    pub round_start_times: Vec<f64>,
    pub verifier: VerifierSpec,
    /// Fraction of the two-stage budget spent on random search.
    pub split: f64,
    /// Two-stage budget in compute units per unit of scaling factor.
    pub rs_ns_budget_per_factor: f64,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::RandomSearch,
            scaling_factors: vec![1, 2, 4, 8],
            keep: 1,
            round_start_times: STANDARD_ROUND_START_TIMES.to_vec(),
            verifier: VerifierSpec::Logdensity,
            split: 0.5,
            rs_ns_budget_per_factor: 8.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParetoSpec {
    pub methods: Vec<Method>,
    /// Noise magnitudes as multiples of each method's reference magnitude.
    pub multipliers: Vec<f64>,
    /// Overrides of the reference magnitudes, keyed by method name.
    pub reference_noise_scales: BTreeMap<String, f64>,
    pub n_groups: usize,
    pub group_size: usize,
    /// Direct target draws the quality axis compares against.
    pub reference_samples: usize,
}

impl Default for ParetoSpec {
    fn default() -> Self {
        Self {
            methods: vec![Method::Sde, Method::DmfmOde, Method::ScoreOrthOde, Method::EdmSde, Method::ScoreSde],
            multipliers: vec![0.0, 0.25, 0.5, 1.0, 1.5],
            reference_noise_scales: BTreeMap::new(),
            n_groups: 64,
            group_size: 8,
            reference_samples: 4096,
        }
    }
}

impl ParetoSpec {
    pub fn reference_scale(&self, m: Method) -> f64 {
        self.reference_noise_scales.get(m.name()).copied().unwrap_or_else(|| m.reference_noise_scale())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySpec {
    pub t_clamp: f64,
    pub unprojected: bool,
    pub n_probes: usize,
}

impl Default for VerifySpec {
    fn default() -> Self {
        let d = VerifyConfig::default();
        Self { t_clamp: d.t_clamp, unprojected: d.unprojected, n_probes: d.n_probes }
    }
}

impl VerifySpec {
    pub fn to_config(&self, seed: u64) -> VerifyConfig {
        VerifyConfig { t_clamp: self.t_clamp, unprojected: self.unprojected, n_probes: self.n_probes, seed, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Emit {
    Csv,
    Json,
    Plotdata,
}

impl Emit {
    pub fn parse_list(s: &str) -> Result<Vec<Emit>, ConfigError> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| match p.trim() {
                "csv" => Ok(Emit::Csv),
                "json" => Ok(Emit::Json),
                "plotdata" => Ok(Emit::Plotdata),
                other => Err(ConfigError::invalid("emit", format!("unknown output kind `{other}`"))),
            })
            .collect()
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("fmscale-out")
}

fn default_emit() -> Vec<Emit> {
    vec![Emit::Csv, Emit::Json, Emit::Plotdata]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    #[serde(default)]
    pub stepper: StepperSpec,
    #[serde(default)]
    pub sample: SampleSpec,
    #[serde(default)]
    pub search: SearchSpec,
    #[serde(default)]
    pub pareto: ParetoSpec,
    #[serde(default)]
    pub verify: VerifySpec,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_emit")]
    pub emit: Vec<Emit>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    (line, col)
}

/// Best-effort dotted key path of the table enclosing `offset`.
fn enclosing_table(text: &str, offset: usize) -> Option<String> {
    text[..offset.min(text.len())]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let location = e.span().map(|s| line_col(text, s.start));
            let field = e.span().and_then(|s| enclosing_table(text, s.start));
            ConfigError { message: e.message().trim().to_string(), location, field, source_name: None }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load a TOML config, or the `config` member of a JSON run manifest.
    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError { message: format!("cannot read: {e}"), location: None, field: None, source_name: Some(name.clone()) })?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| ConfigError {
                message: e.to_string(),
                location: Some((e.line(), e.column())),
                field: None,
                source_name: Some(name.clone()),
            })?;
            let inner = v.get("config").cloned().ok_or_else(|| ConfigError::invalid("config", "manifest has no config").with_source(&name))?;
            let cfg: Self = serde_json::from_value(inner).map_err(|e| ConfigError::invalid("config", e.to_string()).with_source(&name))?;
            cfg.validate().map_err(|e| e.with_source(&name))?;
            cfg
        } else {
            Self::from_toml_str(&text).map_err(|e| e.with_source(&name))?
        };
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let target = self.target.resolve()?;
        // commands pick their own default method; check the one given, or a
        // stochastic one so that a bare noise_scale is accepted
        self.stepper.resolve(self.stepper.method.unwrap_or(Method::DmfmOde))?;
        if self.seeds.is_empty() {
            return Err(ConfigError::invalid("seeds", "at least one seed is required"));
        }
        if self.sample.n_groups == 0 || self.sample.group_size == 0 {
            return Err(ConfigError::invalid("sample", "n_groups and group_size must be positive"));
        }
        let s = &self.search;
        if s.scaling_factors.is_empty() || s.scaling_factors.contains(&0) {
            return Err(ConfigError::invalid("search.scaling_factors", "need positive scaling factors"));
        }
        if s.keep == 0 {
            return Err(ConfigError::invalid("search.keep", "must be at least 1"));
        }
        if s.algorithm != Algorithm::RsPlusNs && s.scaling_factors.iter().any(|&n| n < s.keep) {
            return Err(ConfigError::invalid("search.keep", "must not exceed any scaling factor"));
        }
        validate_start_times(&s.round_start_times)
            .map_err(|e| ConfigError::invalid("search.round_start_times", e.to_string()))?;
        if !(s.split > 0.0 && s.split < 1.0) {
            return Err(ConfigError::invalid("search.split", "must lie in (0, 1)"));
        }
        if !(s.rs_ns_budget_per_factor > 0.0 && s.rs_ns_budget_per_factor.is_finite()) {
            return Err(ConfigError::invalid("search.rs_ns_budget_per_factor", "must be positive"));
        }
        s.verifier.build(&target)?;
        let p = &self.pareto;
        if p.methods.is_empty() || p.multipliers.is_empty() {
            return Err(ConfigError::invalid("pareto", "methods and multipliers must be nonempty"));
        }
        if p.multipliers.iter().any(|&m| !(m >= 0.0 && m.is_finite())) {
            return Err(ConfigError::invalid("pareto.multipliers", "must be nonnegative"));
        }
        if p.methods.contains(&Method::Ode) {
            return Err(ConfigError::invalid("pareto.methods", "ode has no noise magnitude to sweep"));
        }
        for (k, &v) in &p.reference_noise_scales {
            if Method::parse(k).is_none() {
                return Err(ConfigError::invalid("pareto.reference_noise_scales", format!("unknown method `{k}`")));
            }
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ConfigError::invalid("pareto.reference_noise_scales", format!("`{k}` must be nonnegative")));
            }
        }
        if p.n_groups == 0 || p.group_size < 2 || p.reference_samples < 2 {
            return Err(ConfigError::invalid("pareto", "need n_groups >= 1, group_size >= 2, reference_samples >= 2"));
        }
        if !(self.verify.t_clamp >= 0.0 && self.verify.t_clamp < 0.5) {
            return Err(ConfigError::invalid("verify.t_clamp", "must lie in [0, 0.5)"));
        }
        if self.emit.is_empty() {
            return Err(ConfigError::invalid("emit", "select at least one output kind"));
        }
        Ok(())
    }

    pub fn target(&self) -> GaussianMixtureTarget {
        self.target.resolve().expect("validated")
    }

    /// The same config with the target in component form and every stepper
    /// field filled in for `default_method`.
    pub fn resolved(&self, default_method: Method) -> Self {
        let mut c = self.clone();
        c.target = TargetSpec::explicit(&self.target());
        c.stepper = StepperSpec::explicit(&self.stepper.resolve(default_method).expect("validated"));
        c
    }

    pub fn emits(&self, e: Emit) -> bool {
        self.emit.contains(&e)
    }
}
