//! Samplers and exact conditional laws for the simulation mechanisms.
//!
//! Each [`DgpSpec`] kind exposes both an i.i.d. sampler and a
//! [`ConditionalLaw`] with matching cdf/pdf, so that every simulated setting
//! can be compared against its exact population quantities. The five
//! built-in mechanisms cover a smooth lognormal control (`M1`), a
//! near-threshold normal mixture shoulder (`M2`), tail-density
//! heterogeneity (`M3`), an x-dependent extreme-value mixture (`M4`), and
//! symmetric Pareto-type heavy tails (`M5`). [`build_custom_mixture`]
//! assembles arbitrary x-invariant mixtures, which supply the disconnected
//! highest-density test laws.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::data::{Dataset, Seed};
use crate::oracle::{oracle_quantile, ConditionalLaw};

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("mixture weights must be positive and sum to 1, got sum {sum}")]
    BadWeights { sum: f64 },
    #[error("mixture has no components")]
    NoComponents,
    #[error("invalid parameter: {0}")]
    BadParam(String),
    #[error("sampling failed: {0}")]
    Sampling(String),
}

fn default_m4_normal_sd() -> f64 {
    1.0
}
fn default_m4_exp_rate() -> f64 {
    1.0
}
fn default_m4_exp_shift() -> f64 {
    2.0
}
fn default_m5_shape() -> f64 {
    2.5
}
fn default_x_trend() -> f64 {
    0.0
}

/// A data-generating mechanism: one of the five built-in settings or a
/// custom x-invariant mixture (optionally with a linear trend in `x`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpSpec {
    M1,
    M2,
    M3,
    M4 {
        #[serde(default = "default_m4_normal_sd")]
        normal_sd: f64,
        #[serde(default = "default_m4_exp_rate")]
        exp_rate: f64,
        #[serde(default = "default_m4_exp_shift")]
        exp_shift: f64,
    },
    M5 {
        #[serde(default = "default_m5_shape")]
        pareto_shape: f64,
    },
    CustomMixture {
        components: Vec<WeightedComponent>,
        /// Adds `x_trend * x` to every response, with `X ~ Uniform(0,1)`.
        #[serde(default = "default_x_trend")]
        x_trend: f64,
    },
}

impl DgpSpec {
    /// M4 with its documented default parameters.
    pub fn m4_default() -> Self {
        DgpSpec::M4 {
            normal_sd: default_m4_normal_sd(),
            exp_rate: default_m4_exp_rate(),
            exp_shift: default_m4_exp_shift(),
        }
    }

    /// M5 with its documented default Pareto shape.
    pub fn m5_default() -> Self {
        DgpSpec::M5 {
            pareto_shape: default_m5_shape(),
        }
    }

    pub fn validate(&self) -> Result<(), DgpError> {
        match self {
            DgpSpec::M1 | DgpSpec::M2 | DgpSpec::M3 => Ok(()),
            DgpSpec::M4 {
                normal_sd,
                exp_rate,
                ..
            } => {
                if *normal_sd <= 0.0 {
                    return Err(DgpError::BadParam(format!("normal_sd must be positive, got {normal_sd}")));
                }
                if *exp_rate <= 0.0 {
                    return Err(DgpError::BadParam(format!("exp_rate must be positive, got {exp_rate}")));
                }
                Ok(())
            }
            DgpSpec::M5 { pareto_shape } => {
                if *pareto_shape <= 1.0 {
                    return Err(DgpError::BadParam(format!(
                        "pareto_shape must exceed 1 for a finite mean, got {pareto_shape}"
                    )));
                }
                Ok(())
            }
            DgpSpec::CustomMixture { components, .. } => validate_components(components),
        }
    }
}

/// One mixture component and its weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedComponent {
    pub weight: f64,
    pub component: MixtureComponent,
}

/// Supported mixture component families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MixtureComponent {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
    Exponential { rate: f64, shift: f64 },
    LogNormal { mu: f64, sigma: f64, shift: f64 },
    /// `S * T` with `S = +/-1` equiprobable and `T ~ Pareto(scale, shape)`.
    SymmetricPareto { scale: f64, shape: f64 },
}

impl MixtureComponent {
    fn validate(&self) -> Result<(), DgpError> {
        let bad = |msg: String| Err(DgpError::BadParam(msg));
        match *self {
            MixtureComponent::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return bad(format!("uniform needs hi > lo, got [{lo}, {hi}]"));
                }
            }
            MixtureComponent::Normal { sd, .. } => {
                if sd <= 0.0 {
                    return bad(format!("normal sd must be positive, got {sd}"));
                }
            }
            MixtureComponent::Exponential { rate, .. } => {
                if rate <= 0.0 {
                    return bad(format!("exponential rate must be positive, got {rate}"));
                }
            }
            MixtureComponent::LogNormal { sigma, .. } => {
                if sigma <= 0.0 {
                    return bad(format!("lognormal sigma must be positive, got {sigma}"));
                }
            }
            MixtureComponent::SymmetricPareto { scale, shape } => {
                if scale <= 0.0 || shape <= 0.0 {
                    return bad(format!(
                        "symmetric pareto needs positive scale and shape, got ({scale}, {shape})"
                    ));
                }
            }
        }
        Ok(())
    }

    fn cdf(&self, y: f64) -> f64 {
        match *self {
            MixtureComponent::Uniform { lo, hi } => ((y - lo) / (hi - lo)).clamp(0.0, 1.0),
            MixtureComponent::Normal { mean, sd } => std_normal().cdf((y - mean) / sd),
            MixtureComponent::Exponential { rate, shift } => {
                if y <= shift {
                    0.0
                } else {
                    1.0 - (-rate * (y - shift)).exp()
                }
            }
            MixtureComponent::LogNormal { mu, sigma, shift } => {
                if y <= shift {
                    0.0
                } else {
                    std_normal().cdf(((y - shift).ln() - mu) / sigma)
                }
            }
            MixtureComponent::SymmetricPareto { scale, shape } => {
                if y <= -scale {
                    0.5 * (-y / scale).powf(-shape)
                } else if y < scale {
                    0.5
                } else {
                    1.0 - 0.5 * (y / scale).powf(-shape)
                }
            }
        }
    }

    fn pdf(&self, y: f64) -> f64 {
        match *self {
            MixtureComponent::Uniform { lo, hi } => {
                if (lo..=hi).contains(&y) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            MixtureComponent::Normal { mean, sd } => std_normal().pdf((y - mean) / sd) / sd,
            MixtureComponent::Exponential { rate, shift } => {
                if y < shift {
                    0.0
                } else {
                    rate * (-rate * (y - shift)).exp()
                }
            }
            MixtureComponent::LogNormal { mu, sigma, shift } => {
                if y <= shift {
                    0.0
                } else {
                    let z = ((y - shift).ln() - mu) / sigma;
                    std_normal().pdf(z) / (sigma * (y - shift))
                }
            }
            MixtureComponent::SymmetricPareto { scale, shape } => {
                let t = y.abs();
                if t < scale {
                    0.0
                } else {
                    0.5 * shape * scale.powf(shape) * t.powf(-shape - 1.0)
                }
            }
        }
    }

    fn support(&self) -> (f64, f64) {
        match *self {
            MixtureComponent::Uniform { lo, hi } => (lo, hi),
            MixtureComponent::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MixtureComponent::Exponential { shift, .. } => (shift, f64::INFINITY),
            MixtureComponent::LogNormal { shift, .. } => (shift, f64::INFINITY),
            MixtureComponent::SymmetricPareto { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        match *self {
            MixtureComponent::Uniform { lo, hi } => lo + p * (hi - lo),
            MixtureComponent::Normal { mean, sd } => mean + sd * normal_quantile(p),
            MixtureComponent::Exponential { rate, shift } => shift - (1.0 - p).ln() / rate,
            MixtureComponent::LogNormal { mu, sigma, shift } => {
                shift + (mu + sigma * normal_quantile(p)).exp()
            }
            MixtureComponent::SymmetricPareto { scale, shape } => {
                if p < 0.5 {
                    -scale * (2.0 * p).powf(-1.0 / shape)
                } else {
                    scale * (2.0 * (1.0 - p)).powf(-1.0 / shape)
                }
            }
        }
    }
}

fn validate_components(components: &[WeightedComponent]) -> Result<(), DgpError> {
    if components.is_empty() {
        return Err(DgpError::NoComponents);
    }
    let mut sum = 0.0;
    for wc in components {
        if wc.weight <= 0.0 {
            return Err(DgpError::BadWeights { sum: wc.weight });
        }
        sum += wc.weight;
        wc.component.validate()?;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DgpError::BadWeights { sum });
    }
    Ok(())
}

/// Builds a validated x-invariant mixture spec.
pub fn build_custom_mixture(components: Vec<WeightedComponent>) -> Result<DgpSpec, DgpError> {
    validate_components(&components)?;
    Ok(DgpSpec::CustomMixture {
        components,
        x_trend: 0.0,
    })
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

/// Standard normal quantile with one Newton polish on top of the library
/// inverse, keeping closed-form quantiles within 1e-9 of the cdf inverse.
fn normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    let mut z = n.inverse_cdf(p);
    let f = n.pdf(z);
    if f > 0.0 {
        z -= (n.cdf(z) - p) / f;
    }
    z
}

// ---------------------------------------------------------------------------
// Exact conditional laws
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
enum LogNormKind {
    M1,
    M3,
}

/// M1/M3 conditional law: `Y = mean(x) + exp(s(x) Z) - exp(s(x)^2 / 2)`, a
/// lognormal shifted so the error has conditional mean zero.
struct ShiftedLogNormalLaw {
    kind: LogNormKind,
}

impl ShiftedLogNormalLaw {
    fn mean(&self, x: f64) -> f64 {
        match self.kind {
            LogNormKind::M1 => 2.0 + 3.0 * x,
            LogNormKind::M3 => 2.0 * (2.0 * PI * x).sin(),
        }
    }

    fn s(&self, x: f64) -> f64 {
        match self.kind {
            LogNormKind::M1 => 0.2 + 0.8 * x,
            LogNormKind::M3 => 0.12 + x * x,
        }
    }

    /// Left support endpoint: `mean(x) - exp(s^2/2)`.
    fn shift(&self, x: f64) -> f64 {
        let s = self.s(x);
        self.mean(x) - (0.5 * s * s).exp()
    }
}

impl ConditionalLaw for ShiftedLogNormalLaw {
    fn cdf(&self, y: f64, x: f64) -> f64 {
        let c = self.shift(x);
        if y <= c {
            0.0
        } else {
            std_normal().cdf((y - c).ln() / self.s(x))
        }
    }

    fn pdf(&self, y: f64, x: f64) -> f64 {
        let c = self.shift(x);
        if y <= c {
            0.0
        } else {
            let s = self.s(x);
            std_normal().pdf((y - c).ln() / s) / (s * (y - c))
        }
    }

    fn support(&self, x: f64) -> (f64, f64) {
        (self.shift(x), f64::INFINITY)
    }

    fn quantile_closed_form(&self, tau: f64, x: f64) -> Option<f64> {
        Some(self.shift(x) + (self.s(x) * normal_quantile(tau)).exp())
    }
}

fn m2_p(x: f64) -> f64 {
    0.105 + 0.06 * x
}

fn m2_d(x: f64) -> f64 {
    2.2 + 1.2 * x
}

const M2_BASE_SD: f64 = 0.18;
const M2_BUMP_SD: f64 = 0.22;

/// M2 conditional law: two-component normal mixture with an x-dependent
/// shoulder mass near the miscoverage level, recentered to mean zero.
struct M2Law;

impl ConditionalLaw for M2Law {
    fn cdf(&self, y: f64, x: f64) -> f64 {
        let (p, d) = (m2_p(x), m2_d(x));
        let loc = 2.0 * x - p * d;
        (1.0 - p) * std_normal().cdf((y - loc) / M2_BASE_SD)
            + p * std_normal().cdf((y - loc - d) / M2_BUMP_SD)
    }

    fn pdf(&self, y: f64, x: f64) -> f64 {
        let (p, d) = (m2_p(x), m2_d(x));
        let loc = 2.0 * x - p * d;
        (1.0 - p) * std_normal().pdf((y - loc) / M2_BASE_SD) / M2_BASE_SD
            + p * std_normal().pdf((y - loc - d) / M2_BUMP_SD) / M2_BUMP_SD
    }

    fn support(&self, _x: f64) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

fn m4_p(x: f64) -> f64 {
    (0.1 + 0.1 * (x + 2.0)).clamp(0.05, 0.9)
}

fn m4_sigma(x: f64) -> f64 {
    1.0 + 0.5 * x * x
}

/// M4 conditional law: normal plus shifted-exponential mixture error with
/// x-dependent extreme-value probability, recentered to mean zero and
/// scaled by `1 + 0.5 x^2`.
struct M4Law {
    normal_sd: f64,
    exp_rate: f64,
    exp_shift: f64,
}

impl M4Law {
    /// Mean of the raw (uncentered) error mixture at covariate `x`.
    fn raw_mean(&self, x: f64) -> f64 {
        m4_p(x) * (self.exp_shift + 1.0 / self.exp_rate)
    }
}

impl ConditionalLaw for M4Law {
    fn cdf(&self, y: f64, x: f64) -> f64 {
        let p = m4_p(x);
        let t = (y - 2.0 * x) / m4_sigma(x) + self.raw_mean(x);
        let exp_part = if t <= self.exp_shift {
            0.0
        } else {
            1.0 - (-self.exp_rate * (t - self.exp_shift)).exp()
        };
        (1.0 - p) * std_normal().cdf(t / self.normal_sd) + p * exp_part
    }

    fn pdf(&self, y: f64, x: f64) -> f64 {
        let p = m4_p(x);
        let sigma = m4_sigma(x);
        let t = (y - 2.0 * x) / sigma + self.raw_mean(x);
        let exp_part = if t < self.exp_shift {
            0.0
        } else {
            self.exp_rate * (-self.exp_rate * (t - self.exp_shift)).exp()
        };
        ((1.0 - p) * std_normal().pdf(t / self.normal_sd) / self.normal_sd + p * exp_part) / sigma
    }

    fn support(&self, _x: f64) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// M5 conditional law: symmetric Pareto-type error scaled by `1 + |x|`.
/// The population error is symmetric with mean zero, so the law carries no
/// recentering; the sampler's within-replicate recentering is a finite-n
/// adjustment.
struct M5Law {
    shape: f64,
}

impl M5Law {
    fn eps_cdf(&self, t: f64) -> f64 {
        if t <= -1.0 {
            0.5 * (-t).powf(-self.shape)
        } else if t < 1.0 {
            0.5
        } else {
            1.0 - 0.5 * t.powf(-self.shape)
        }
    }

    fn eps_pdf(&self, t: f64) -> f64 {
        let a = t.abs();
        if a < 1.0 {
            0.0
        } else {
            0.5 * self.shape * a.powf(-self.shape - 1.0)
        }
    }
}

impl ConditionalLaw for M5Law {
    fn cdf(&self, y: f64, x: f64) -> f64 {
        let w = 1.0 + x.abs();
        self.eps_cdf((y - 2.0 * x) / w)
    }

    fn pdf(&self, y: f64, x: f64) -> f64 {
        let w = 1.0 + x.abs();
        self.eps_pdf((y - 2.0 * x) / w) / w
    }

    fn support(&self, _x: f64) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }
}

/// Conditional law of a custom mixture, shifted by `x_trend * x`.
struct MixtureLaw {
    components: Vec<WeightedComponent>,
    trend: f64,
}

impl ConditionalLaw for MixtureLaw {
    fn cdf(&self, y: f64, x: f64) -> f64 {
        let t = y - self.trend * x;
        self.components
            .iter()
            .map(|wc| wc.weight * wc.component.cdf(t))
            .sum()
    }

    fn pdf(&self, y: f64, x: f64) -> f64 {
        let t = y - self.trend * x;
        self.components
            .iter()
            .map(|wc| wc.weight * wc.component.pdf(t))
            .sum()
    }

    fn support(&self, x: f64) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for wc in &self.components {
            let (a, b) = wc.component.support();
            lo = lo.min(a);
            hi = hi.max(b);
        }
        (lo + self.trend * x, hi + self.trend * x)
    }

    fn quantile_closed_form(&self, tau: f64, x: f64) -> Option<f64> {
        if self.components.len() == 1 {
            Some(self.components[0].component.quantile(tau) + self.trend * x)
        } else {
            None
        }
    }

    fn x_invariant(&self) -> bool {
        self.trend == 0.0
    }
}

/// Exact conditional law backing a [`DgpSpec`].
pub fn conditional_law(spec: &DgpSpec) -> Result<Arc<dyn ConditionalLaw>, DgpError> {
    spec.validate()?;
    Ok(match spec {
        DgpSpec::M1 => Arc::new(ShiftedLogNormalLaw { kind: LogNormKind::M1 }),
        DgpSpec::M2 => Arc::new(M2Law),
        DgpSpec::M3 => Arc::new(ShiftedLogNormalLaw { kind: LogNormKind::M3 }),
        DgpSpec::M4 {
            normal_sd,
            exp_rate,
            exp_shift,
        } => Arc::new(M4Law {
            normal_sd: *normal_sd,
            exp_rate: *exp_rate,
            exp_shift: *exp_shift,
        }),
        DgpSpec::M5 { pareto_shape } => Arc::new(M5Law { shape: *pareto_shape }),
        DgpSpec::CustomMixture { components, x_trend } => Arc::new(MixtureLaw {
            components: clone_components(components),
            trend: *x_trend,
        }),
    })
}

fn clone_components(components: &[WeightedComponent]) -> Vec<WeightedComponent> {
    components.to_vec()
}

// ---------------------------------------------------------------------------
// Samplers
// ---------------------------------------------------------------------------

/// Draws an i.i.d. sample of size `n`; deterministic given `(spec, n, seed)`.
pub fn sample(spec: &DgpSpec, n: usize, seed: Seed) -> Result<Dataset, DgpError> {
    spec.validate()?;
    if n == 0 {
        return Err(DgpError::BadParam("sample size must be at least 1".into()));
    }
    let mut rng = seed.rng();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    match spec {
        DgpSpec::M1 | DgpSpec::M3 => {
            let law = ShiftedLogNormalLaw {
                kind: if matches!(spec, DgpSpec::M1) { LogNormKind::M1 } else { LogNormKind::M3 },
            };
            for _ in 0..n {
                let x: f64 = rng.random();
                let z: f64 = StandardNormal.sample(&mut rng);
                let s = law.s(x);
                let eps = (s * z).exp() - (0.5 * s * s).exp();
                xs.push(x);
                ys.push(law.mean(x) + eps);
            }
        }
        DgpSpec::M2 => {
            for _ in 0..n {
                let x: f64 = rng.random();
                let (p, d) = (m2_p(x), m2_d(x));
                let pick: f64 = rng.random();
                let z: f64 = StandardNormal.sample(&mut rng);
                let u = if pick < p { d + M2_BUMP_SD * z } else { M2_BASE_SD * z };
                xs.push(x);
                ys.push(2.0 * x + u - p * d);
            }
        }
        DgpSpec::M4 {
            normal_sd,
            exp_rate,
            exp_shift,
        } => {
            let exp_dist = Exp::new(*exp_rate)
                .map_err(|e| DgpError::Sampling(format!("exponential component: {e}")))?;
            for _ in 0..n {
                let x: f64 = rng.random_range(-2.0..2.0);
                let p = m4_p(x);
                let pick: f64 = rng.random();
                let raw = if pick < p {
                    exp_shift + exp_dist.sample(&mut rng)
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    normal_sd * z
                };
                let centered = raw - p * (exp_shift + 1.0 / exp_rate);
                xs.push(x);
                ys.push(2.0 * x + m4_sigma(x) * centered);
            }
        }
        DgpSpec::M5 { pareto_shape } => {
            let pareto = Pareto::new(1.0, *pareto_shape)
                .map_err(|e| DgpError::Sampling(format!("pareto component: {e}")))?;
            let mut eps = Vec::with_capacity(n);
            for _ in 0..n {
                let x: f64 = rng.random_range(-2.0..2.0);
                let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let t: f64 = pareto.sample(&mut rng);
                xs.push(x);
                eps.push(sign * t);
            }
            // Recentered within the replicate by the sample mean.
            let mean = eps.iter().sum::<f64>() / n as f64;
            for i in 0..n {
                ys.push(2.0 * xs[i] + (1.0 + xs[i].abs()) * (eps[i] - mean));
            }
        }
        DgpSpec::CustomMixture { components, x_trend } => {
            let law = MixtureLaw {
                components: clone_components(components),
                trend: *x_trend,
            };
            for _ in 0..n {
                let x: f64 = rng.random();
                let u: f64 = rng.random::<f64>().clamp(1e-16, 1.0 - 1e-16);
                let y = mixture_inverse(&law, x, u)?;
                xs.push(x);
                ys.push(y);
            }
        }
    }
    Dataset::from_univariate(xs, ys).map_err(|e| DgpError::Sampling(e.to_string()))
}

/// Inverse-cdf draw from the mixture law at covariate `x`.
fn mixture_inverse(law: &MixtureLaw, x: f64, u: f64) -> Result<f64, DgpError> {
    oracle_quantile(law, x, u, 1e-10).map_err(|e| DgpError::Sampling(e.to_string()))
}

/// Draws from the conditional law of `Y | X = x` directly, used to
/// cross-validate samplers against [`conditional_law`]. For M5 this is the
/// population error law, without the within-replicate recentering.
pub fn sample_conditional(spec: &DgpSpec, x: f64, n: usize, seed: Seed) -> Result<Vec<f64>, DgpError> {
    spec.validate()?;
    let mut rng = seed.rng();
    let mut ys = Vec::with_capacity(n);
    match spec {
        DgpSpec::M1 | DgpSpec::M3 => {
            let law = ShiftedLogNormalLaw {
                kind: if matches!(spec, DgpSpec::M1) { LogNormKind::M1 } else { LogNormKind::M3 },
            };
            let s = law.s(x);
            for _ in 0..n {
                let z: f64 = StandardNormal.sample(&mut rng);
                ys.push(law.mean(x) + (s * z).exp() - (0.5 * s * s).exp());
            }
        }
        DgpSpec::M2 => {
            let (p, d) = (m2_p(x), m2_d(x));
            for _ in 0..n {
                let pick: f64 = rng.random();
                let z: f64 = StandardNormal.sample(&mut rng);
                let u = if pick < p { d + M2_BUMP_SD * z } else { M2_BASE_SD * z };
                ys.push(2.0 * x + u - p * d);
            }
        }
        DgpSpec::M4 {
            normal_sd,
            exp_rate,
            exp_shift,
        } => {
            let exp_dist = Exp::new(*exp_rate)
                .map_err(|e| DgpError::Sampling(format!("exponential component: {e}")))?;
            let p = m4_p(x);
            for _ in 0..n {
                let pick: f64 = rng.random();
                let raw = if pick < p {
                    exp_shift + exp_dist.sample(&mut rng)
                } else {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    normal_sd * z
                };
                let centered = raw - p * (exp_shift + 1.0 / exp_rate);
                ys.push(2.0 * x + m4_sigma(x) * centered);
            }
        }
        DgpSpec::M5 { pareto_shape } => {
            let pareto = Pareto::new(1.0, *pareto_shape)
                .map_err(|e| DgpError::Sampling(format!("pareto component: {e}")))?;
            for _ in 0..n {
                let sign = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                let t: f64 = pareto.sample(&mut rng);
                ys.push(2.0 * x + (1.0 + x.abs()) * sign * t);
            }
        }
        DgpSpec::CustomMixture { components, x_trend } => {
            let law = MixtureLaw {
                components: clone_components(components),
                trend: *x_trend,
            };
            for _ in 0..n {
                let u: f64 = rng.random::<f64>().clamp(1e-16, 1.0 - 1e-16);
                ys.push(mixture_inverse(&law, x, u)?);
            }
        }
    }
    Ok(ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ks_distance(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        sample.sort_unstable_by(f64::total_cmp);
        let n = sample.len() as f64;
        let mut d: f64 = 0.0;
        for (i, &y) in sample.iter().enumerate() {
            let f = cdf(y);
            d = d.max((f - i as f64 / n).abs());
            d = d.max((f - (i as f64 + 1.0) / n).abs());
        }
        d
    }

    #[test]
    fn m1_error_formula_at_zero_noise() {
        // At x = 0.5, s = 0.6 and the error at Z = 0 is 1 - exp(0.18).
        let law = ShiftedLogNormalLaw { kind: LogNormKind::M1 };
        let s = law.s(0.5);
        assert_abs_diff_eq!(s, 0.6, epsilon = 1e-15);
        let eps_at_z0 = 1.0 - (0.5 * s * s).exp();
        assert_abs_diff_eq!(eps_at_z0, -0.19721736312181015, epsilon = 1e-12);
        assert_abs_diff_eq!(law.shift(0.5), 3.5 + eps_at_z0 - 1.0, epsilon = 1e-12);
    }

    #[test]
    fn m1_cdf_matches_shifted_lognormal_form() {
        let law = conditional_law(&DgpSpec::M1).unwrap();
        let shift = 3.5 - (0.18_f64).exp();
        // Below the support the cdf is zero.
        assert_eq!(law.cdf(shift - 1e-3, 0.5), 0.0);
        let y = 4.0;
        let expected = std_normal().cdf((y - shift).ln() / 0.6);
        assert_abs_diff_eq!(law.cdf(y, 0.5), expected, epsilon = 1e-12);
    }

    #[test]
    fn m2_cdf_at_origin_matches_mixture_form() {
        let law = conditional_law(&DgpSpec::M2).unwrap();
        let shift = 0.105 * 2.2;
        assert_abs_diff_eq!(shift, 0.231, epsilon = 1e-12);
        for y in [-0.3, 0.0, 0.4, 2.0, 2.4] {
            let expected = 0.895 * std_normal().cdf((y + shift) / 0.18)
                + 0.105 * std_normal().cdf((y - 2.2 + shift) / 0.22);
            assert_abs_diff_eq!(law.cdf(y, 0.0), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn errors_are_recentered_to_mean_zero() {
        // M1-M3 recenter analytically; M4-M5 land within Monte Carlo error.
        for (spec, x, mean) in [
            (DgpSpec::M1, 0.3, 2.0 + 3.0 * 0.3),
            (DgpSpec::M2, 0.7, 2.0 * 0.7),
            (DgpSpec::M3, 0.25, 2.0 * (2.0 * PI * 0.25).sin()),
            (DgpSpec::m4_default(), 1.0, 2.0),
            (DgpSpec::m5_default(), -1.0, -2.0),
        ] {
            let ys = sample_conditional(&spec, x, 200_000, Seed::new(11)).unwrap();
            let m = ys.iter().sum::<f64>() / ys.len() as f64;
            assert!((m - mean).abs() < 0.05, "{spec:?}: mean {m} vs {mean}");
        }
    }

    #[test]
    fn samplers_agree_with_conditional_laws() {
        let specs: Vec<(DgpSpec, f64)> = vec![
            (DgpSpec::M1, 0.5),
            (DgpSpec::M2, 0.0),
            (DgpSpec::M3, 0.25),
            (DgpSpec::m4_default(), 1.0),
            (DgpSpec::m5_default(), -1.0),
        ];
        for (spec, x) in specs {
            let law = conditional_law(&spec).unwrap();
            let mut ys = sample_conditional(&spec, x, 100_000, Seed::new(5)).unwrap();
            let d = ks_distance(&mut ys, |y| law.cdf(y, x));
            assert!(d <= 0.01, "{spec:?} at x={x}: KS distance {d}");
        }
    }

    #[test]
    fn mixture_sampler_agrees_with_law() {
        let spec = build_custom_mixture(vec![
            WeightedComponent {
                weight: 0.6,
                component: MixtureComponent::Uniform { lo: 0.0, hi: 1.0 },
            },
            WeightedComponent {
                weight: 0.4,
                component: MixtureComponent::Uniform { lo: 2.0, hi: 3.0 },
            },
        ])
        .unwrap();
        let law = conditional_law(&spec).unwrap();
        let mut ys = sample_conditional(&spec, 0.0, 100_000, Seed::new(8)).unwrap();
        let d = ks_distance(&mut ys, |y| law.cdf(y, 0.0));
        assert!(d <= 0.01, "KS distance {d}");
        // Density heights and the empty valley.
        assert_abs_diff_eq!(law.pdf(0.5, 0.0), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(law.pdf(2.5, 0.0), 0.4, epsilon = 1e-12);
        assert_eq!(law.pdf(1.5, 0.0), 0.0);
    }

    #[test]
    fn single_component_mixture_degenerates() {
        let spec = build_custom_mixture(vec![WeightedComponent {
            weight: 1.0,
            component: MixtureComponent::Normal { mean: 1.0, sd: 2.0 },
        }])
        .unwrap();
        let law = conditional_law(&spec).unwrap();
        let expected = Normal::new(1.0, 2.0).unwrap();
        for y in [-3.0, 0.0, 1.0, 4.0] {
            assert_abs_diff_eq!(law.cdf(y, 0.0), expected.cdf(y), epsilon = 1e-12);
        }
        // cdf tends to 1 far in the upper tail.
        assert_abs_diff_eq!(law.cdf(1e6, 0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn closed_form_quantiles_invert_cdfs() {
        let comps = vec![
            MixtureComponent::Uniform { lo: -1.0, hi: 4.0 },
            MixtureComponent::Normal { mean: 0.5, sd: 1.3 },
            MixtureComponent::Exponential { rate: 2.0, shift: -1.0 },
            MixtureComponent::LogNormal { mu: 0.0, sigma: 1.0, shift: 0.0 },
            MixtureComponent::SymmetricPareto { scale: 1.0, shape: 2.5 },
        ];
        for comp in comps {
            for tau in [0.01, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99] {
                let q = comp.quantile(tau);
                assert!(
                    (comp.cdf(q) - tau).abs() <= 1e-9,
                    "{comp:?} at {tau}: cdf(q) = {}",
                    comp.cdf(q)
                );
            }
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample(&DgpSpec::M1, 100, Seed::new(3)).unwrap();
        let b = sample(&DgpSpec::M1, 100, Seed::new(3)).unwrap();
        assert_eq!(a, b);
        let c = sample(&DgpSpec::M1, 100, Seed::new(4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn m1_support_is_left_bounded() {
        let law = conditional_law(&DgpSpec::M1).unwrap();
        let data = sample(&DgpSpec::M1, 5000, Seed::new(21)).unwrap();
        for i in 0..data.n() {
            let x = data.row(i)[0];
            let (lo, hi) = law.support(x);
            assert!(data.y()[i] > lo, "response below support shift at x={x}");
            assert_eq!(hi, f64::INFINITY);
        }
    }

    #[test]
    fn custom_mixture_rejects_bad_weights() {
        let err = build_custom_mixture(vec![WeightedComponent {
            weight: 0.7,
            component: MixtureComponent::Uniform { lo: 0.0, hi: 1.0 },
        }])
        .unwrap_err();
        assert!(matches!(err, DgpError::BadWeights { .. }));
        assert!(build_custom_mixture(vec![]).is_err());
    }

    #[test]
    fn spec_serialization_round_trips() {
        let specs = vec![
            DgpSpec::M1,
            DgpSpec::m4_default(),
            DgpSpec::m5_default(),
            DgpSpec::CustomMixture {
                components: vec![WeightedComponent {
                    weight: 1.0,
                    component: MixtureComponent::Exponential { rate: 1.0, shift: -1.0 },
                }],
                x_trend: 1.0,
            },
        ];
        for spec in specs {
            let json = serde_json::to_string(&spec).unwrap();
            let back: DgpSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, back);
        }
    }
}
