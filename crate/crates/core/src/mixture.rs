//! Diagonal Gaussian mixture targets and their marginals under the linear path.
//!
//! With `x0 ~ N(0, I)` independent of `x1 ~ sum_k w_k N(mu_k, diag v_k)`, the
//! time-`t` marginal of `(1 - t) x0 + t x1` is again a mixture with the same
//! weights, means `t mu_k` and variances `(1 - t)^2 + t^2 v_k`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::RngStream;

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureRepr", into = "MixtureRepr")]
pub struct GaussianMixtureTarget {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureRepr {
    components: Vec<Component>,
}

impl TryFrom<MixtureRepr> for GaussianMixtureTarget {
    type Error = Error;
    fn try_from(r: MixtureRepr) -> Result<Self> {
        Self::from_components(&r.components)
    }
}

impl From<GaussianMixtureTarget> for MixtureRepr {
    fn from(t: GaussianMixtureTarget) -> Self {
        Self { components: t.components() }
    }
}

/// Per-component parameters of the time-`t` marginal.
#[derive(Clone, Debug, PartialEq)]
pub struct ComponentMarginal {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub log_weight: f64,
}

impl GaussianMixtureTarget {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("mixture needs at least one component".into()));
        }
        check_dim(weights.len(), means.len())?;
        check_dim(weights.len(), variances.len())?;
        let d = means[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_dim(d, m.len())?;
            check_dim(d, v.len())?;
            if m.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite("component mean".into()));
            }
            if v.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
                return Err(Error::InvalidArgument("variances must be positive and finite".into()));
            }
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidArgument(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { weights, means, variances })
    }

    pub fn from_components(components: &[Component]) -> Result<Self> {
        Self::new(
            components.iter().map(|c| c.weight).collect(),
            components.iter().map(|c| c.mean.clone()).collect(),
            components.iter().map(|c| c.variance.clone()).collect(),
        )
    }

    pub fn components(&self) -> Vec<Component> {
        (0..self.n_components())
            .map(|k| Component {
                weight: self.weights[k],
                mean: self.means[k].clone(),
                variance: self.variances[k].clone(),
            })
            .collect()
    }

    /// One isotropic Gaussian `N(mean, variance * I)`.
    pub fn single_gaussian(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![1.0], vec![mean], vec![vec![variance; d]])
    }

    /// The standard two-component 2-d target: equal weights, means
    /// `(-2, 0)` and `(2, 0)`, variance `0.5` per axis.
    pub fn two_component_2d() -> Self {
        Self::new(
            vec![0.5, 0.5],
            vec![vec![-2.0, 0.0], vec![2.0, 0.0]],
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        )
        .expect("preset is valid")
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Exact parameters of `p_t`.
    pub fn marginal_stats(&self, t: f64) -> Result<Vec<ComponentMarginal>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        let r = 1.0 - t;
        Ok((0..self.n_components())
            .map(|k| ComponentMarginal {
                mean: self.means[k].iter().map(|m| t * m).collect(),
                var: self.variances[k].iter().map(|v| r * r + t * t * v).collect(),
                log_weight: self.weights[k].ln(),
            })
            .collect())
    }

    /// `log w_k + log N(x; m_k(t), s_k(t))` for every component.
    pub(crate) fn component_log_terms(&self, x: &[f64], t: f64) -> Vec<f64> {
        let r = 1.0 - t;
        (0..self.n_components())
            .map(|k| {
                let mut acc = self.weights[k].ln();
                for ((&xi, &m), &v) in x.iter().zip(&self.means[k]).zip(&self.variances[k]) {
                    let s = r * r + t * t * v;
                    let z = xi - t * m;
                    acc -= 0.5 * ((2.0 * PI * s).ln() + z * z / s);
                }
                acc
            })
            .collect()
    }

    /// `log p_t(x)` and the posterior component responsibilities at `x`.
    pub(crate) fn log_density_and_responsibilities(&self, x: &[f64], t: f64) -> (f64, Vec<f64>) {
        let terms = self.component_log_terms(x, t);
        let lse = log_sum_exp(&terms);
        let resp = terms.iter().map(|l| (l - lse).exp()).collect();
        (lse, resp)
    }

    /// `log p_t(x)`.
    pub fn log_density_at(&self, x: &[f64], t: f64) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t, lo: 0.0, hi: 1.0 });
        }
        Ok(log_sum_exp(&self.component_log_terms(x, t)))
    }

    /// Data log-density `log p_1(x)`.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.log_density_at(x, 1.0)
    }

    /// Posterior probability of each component given `x` under the data density.
    pub fn responsibilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_and_responsibilities(x, 1.0).1)
    }

    /// Independent draws from the data distribution.
    pub fn sample(&self, n: usize, stream: &RngStream) -> Vec<Vec<f64>> {
        let mut rng = stream.generator();
        let d = self.dim();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = self.n_components() - 1;
                for (j, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = j;
                        break;
                    }
                }
                (0..d)
                    .map(|i| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        self.means[k][i] + self.variances[k][i].sqrt() * z
                    })
                    .collect()
            })
            .collect()
    }
}

/// Numerically stable `log(sum(exp(v)))`.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
