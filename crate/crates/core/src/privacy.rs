//! Privacy calculus: the analytic Gaussian trade-off function, the shuffle
//! spectral bound, noise designers and sufficient-condition checks.
//!
//! Conventions: a Gaussian scale is a standard deviation; a Laplace scale is
//! the parameter `b` of a density proportional to `exp(-|x|/b)`, with
//! variance `2b^2`.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

pub use crate::noise::NoiseFamily;

/// Relative slack granted to the condition checks (float rounding only).
pub const CONDITION_RTOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PrivacyError {
    #[error("invalid privacy budget: {0}")]
    Budget(String),
    #[error("Gaussian designs need delta > 0")]
    DeltaZero,
    #[error("Laplace designs need epsilon > 0")]
    EpsilonZero,
    #[error("{0}")]
    Parameter(&'static str),
    #[error("need at least 2 agents, got {0}")]
    Agents(usize),
    #[error("abar must be at least 1, got {0}")]
    Abar(f64),
    #[error("s must be positive, got {0}")]
    NonPositiveS(f64),
    #[error("shuffle noise level overflows f64 (log10 sigma_eta = {0:.1})")]
    Overflow(f64),
    #[error("plan family {plan:?} does not match algorithm {algorithm}")]
    FamilyMismatch { plan: NoiseFamily, algorithm: Algorithm },
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
}

/// Privacy levels and adjacency bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    pub mu: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64, mu: f64) -> Result<Self, PrivacyError> {
        let b = PrivacyBudget { epsilon, delta, mu };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(PrivacyError::Budget(format!("epsilon = {} must be finite and >= 0", self.epsilon)));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(PrivacyError::Budget(format!("delta = {} must lie in [0, 1)", self.delta)));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(PrivacyError::Budget(format!("mu = {} must be positive", self.mu)));
        }
        Ok(())
    }

    fn require(&self, family: NoiseFamily) -> Result<(), PrivacyError> {
        self.validate()?;
        match family {
            NoiseFamily::Gaussian if self.delta <= 0.0 => Err(PrivacyError::DeltaZero),
            NoiseFamily::Laplace if self.epsilon <= 0.0 => Err(PrivacyError::EpsilonZero),
            _ => Ok(()),
        }
    }
}

/// The six algorithm variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    DishufGaussian,
    DishufLaplace,
    OspGaussian,
    OspLaplace,
    DpcaGaussian,
    DpcaLaplace,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DishufGaussian,
        Algorithm::DishufLaplace,
        Algorithm::OspGaussian,
        Algorithm::OspLaplace,
        Algorithm::DpcaGaussian,
        Algorithm::DpcaLaplace,
    ];

    pub fn family(self) -> NoiseFamily {
        match self {
            Algorithm::DishufGaussian | Algorithm::OspGaussian | Algorithm::DpcaGaussian => NoiseFamily::Gaussian,
            _ => NoiseFamily::Laplace,
        }
    }

    pub fn is_dishuf(self) -> bool {
        matches!(self, Algorithm::DishufGaussian | Algorithm::DishufLaplace)
    }

    pub fn is_osp(self) -> bool {
        matches!(self, Algorithm::OspGaussian | Algorithm::OspLaplace)
    }

    pub fn is_dpca(self) -> bool {
        matches!(self, Algorithm::DpcaGaussian | Algorithm::DpcaLaplace)
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DishufGaussian => "dishuf-gaussian",
            Algorithm::DishufLaplace => "dishuf-laplace",
            Algorithm::OspGaussian => "osp-gaussian",
            Algorithm::OspLaplace => "osp-laplace",
            Algorithm::DpcaGaussian => "dpca-gaussian",
            Algorithm::DpcaLaplace => "dpca-laplace",
        }
    }

    /// The one-shot and centralised baselines of the same family.
    pub fn baselines(self) -> (Algorithm, Algorithm) {
        match self.family() {
            NoiseFamily::Gaussian => (Algorithm::OspGaussian, Algorithm::DpcaGaussian),
            NoiseFamily::Laplace => (Algorithm::OspLaplace, Algorithm::DpcaLaplace),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = PrivacyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| PrivacyError::UnknownAlgorithm(s.to_string()))
    }
}

/// Design freedom of the shuffle-based algorithms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignParameter {
    /// Gaussian: `sigma_gamma = (1 + g) mu / (sqrt(n) kappa^-1)`, `g > 0`.
    G(f64),
    /// Laplace: `sigma_gamma = h mu / epsilon`, `h > 1`.
    H(f64),
}

/// Noise levels of one algorithm. Unused scales are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePlan {
    pub algorithm: Algorithm,
    pub family: NoiseFamily,
    pub sigma_gamma: f64,
    pub sigma_eta: f64,
    pub sigma_xi: f64,
    pub param: Option<DesignParameter>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl NoisePlan {
    /// A plan with explicit scales (no design parameter).
    pub fn custom(algorithm: Algorithm, sigma_gamma: f64, sigma_eta: f64, sigma_xi: f64) -> Self {
        NoisePlan {
            algorithm,
            family: algorithm.family(),
            sigma_gamma,
            sigma_eta,
            sigma_xi,
            param: None,
            warnings: Vec::new(),
        }
    }

    /// All scales zero: plain consensus on the exact data.
    pub fn noiseless(algorithm: Algorithm) -> Self {
        NoisePlan::custom(algorithm, 0.0, 0.0, 0.0)
    }
}

/// Standard normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// `ln Phi(x)`, accurate far into the lower tail.
pub fn ln_phi(x: f64) -> f64 {
    if x > -30.0 {
        phi(x).ln()
    } else {
        // Mills-ratio expansion: Phi(x) ~ pdf(x)/|x| * (1 - 1/x^2 + 3/x^4 - 15/x^6).
        let x2 = x * x;
        let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
        -0.5 * x2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

/// `kappa_eps(s) = Phi(s/2 - eps/s) - e^eps Phi(-s/2 - eps/s)`.
pub fn kappa(epsilon: f64, s: f64) -> Result<f64, PrivacyError> {
    if !(s > 0.0) {
        return Err(PrivacyError::NonPositiveS(s));
    }
    Ok(kappa_unchecked(epsilon, s))
}

fn kappa_unchecked(epsilon: f64, s: f64) -> f64 {
    let a = 0.5 * s - epsilon / s;
    let b = -0.5 * s - epsilon / s;
    let first = phi(a);
    let second = (epsilon + ln_phi(b)).exp();
    (first - second).max(0.0)
}

/// Inverse of `kappa_eps` on `(0, 1)`: bracketing then bisection.
pub fn kappa_inv(epsilon: f64, delta: f64) -> Result<f64, PrivacyError> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(PrivacyError::Budget(format!("epsilon = {epsilon} must be finite and >= 0")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(PrivacyError::Budget(format!("delta = {delta} must lie in (0, 1)")));
    }
    let mut lo = 1e-9;
    let mut hi = 1.0;
    while kappa_unchecked(epsilon, hi) < delta {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kappa_unchecked(epsilon, mid) < delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The spectral quantity `alpha` and, stored separately, `1 - alpha`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaBound {
    pub alpha: f64,
    pub one_minus_alpha: f64,
    pub ln_one_minus_alpha: f64,
}

/// `alpha = (1 - x)^(1/(n-1))` with `x = (2 (n + abar^-2))^-(n-1)`.
///
/// `abar = f64::INFINITY` is accepted.
pub fn alpha(n: usize, abar: f64) -> Result<AlphaBound, PrivacyError> {
    if n < 2 {
        return Err(PrivacyError::Agents(n));
    }
    if !(abar >= 1.0) {
        return Err(PrivacyError::Abar(abar));
    }
    let m = (n - 1) as f64;
    let ln_x = -m * (2.0 * (n as f64 + abar.powi(-2))).ln();
    let (one_minus, ln_one_minus) = if ln_x < -700.0 {
        // x underflows; 1 - alpha = x/(n-1) to first order.
        let l = ln_x - m.ln();
        (l.exp(), l)
    } else {
        let x = ln_x.exp();
        let om = -libm::expm1(libm::log1p(-x) / m);
        (om, om.ln())
    };
    Ok(AlphaBound {
        alpha: 1.0 - one_minus,
        one_minus_alpha: one_minus,
        ln_one_minus_alpha: ln_one_minus,
    })
}

fn check_n_abar(n: usize, abar: f64) -> Result<AlphaBound, PrivacyError> {
    alpha(n, abar)
}

/// Gaussian shuffle design: `sigma_gamma` from `g`, `sigma_eta` at the
/// equality frontier of the sufficient condition.
pub fn design_gaussian(budget: &PrivacyBudget, n: usize, abar: f64, g: f64) -> Result<NoisePlan, PrivacyError> {
    budget.require(NoiseFamily::Gaussian)?;
    if !(g > 0.0 && g.is_finite()) {
        return Err(PrivacyError::Parameter("g must be positive"));
    }
    let a = check_n_abar(n, abar)?;
    let k = kappa_inv(budget.epsilon, budget.delta)?;
    let nf = n as f64;
    let mu = budget.mu;
    let sigma_gamma = (1.0 + g) * mu / (nf.sqrt() * k);

    let c = (1.0 + g).powi(2) * mu * mu;
    let bracket = c / (g * (2.0 + g)) - c / (nf * (nf - 1.0) * a.alpha * a.alpha);
    let mut warnings = Vec::new();
    let sigma_eta = if bracket <= 0.0 {
        warnings.push(format!(
            "shuffle-noise bracket is {bracket:e} <= 0; sigma_eta clamped to 0 (condition holds without it)"
        ));
        0.0
    } else {
        let ln_var = (nf - 1.0).ln() + 2.0 * a.alpha.ln() - 2.0 * a.ln_one_minus_alpha - 2.0 * k.ln() + bracket.ln();
        finite_exp(0.5 * ln_var)?
    };
    Ok(NoisePlan {
        algorithm: Algorithm::DishufGaussian,
        family: NoiseFamily::Gaussian,
        sigma_gamma,
        sigma_eta,
        sigma_xi: 0.0,
        param: Some(DesignParameter::G(g)),
        warnings,
    })
}

/// Laplace shuffle design at equality:
/// `sigma_gamma = h mu / eps`, `sigma_eta = 2 mu h n sqrt(n-1) / ((1-alpha)(h-1) eps)`.
pub fn design_laplace(budget: &PrivacyBudget, n: usize, abar: f64, h: f64) -> Result<NoisePlan, PrivacyError> {
    budget.require(NoiseFamily::Laplace)?;
    if !(h > 1.0 && h.is_finite()) {
        return Err(PrivacyError::Parameter("h must exceed 1"));
    }
    let a = check_n_abar(n, abar)?;
    let sigma_gamma = h * budget.mu / budget.epsilon;
    let sigma_eta = laplace_eta_bound(budget, n, &a, h)?;
    Ok(NoisePlan {
        algorithm: Algorithm::DishufLaplace,
        family: NoiseFamily::Laplace,
        sigma_gamma,
        sigma_eta,
        sigma_xi: 0.0,
        param: Some(DesignParameter::H(h)),
        warnings: Vec::new(),
    })
}

fn laplace_eta_bound(budget: &PrivacyBudget, n: usize, a: &AlphaBound, h: f64) -> Result<f64, PrivacyError> {
    let nf = n as f64;
    let ln = LN_2 + budget.mu.ln() + h.ln() + nf.ln() + 0.5 * (nf - 1.0).ln()
        - a.ln_one_minus_alpha
        - (h - 1.0).ln()
        - budget.epsilon.ln();
    finite_exp(ln)
}

fn finite_exp(ln: f64) -> Result<f64, PrivacyError> {
    let v = ln.exp();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(PrivacyError::Overflow(ln / std::f64::consts::LN_10))
    }
}

/// Minimal one-shot or centralised noise level.
pub fn design_baseline(budget: &PrivacyBudget, n: usize, algorithm: Algorithm) -> Result<NoisePlan, PrivacyError> {
    if algorithm.is_dishuf() {
        return Err(PrivacyError::Parameter("design_baseline takes an osp-* or dpca-* algorithm"));
    }
    if n < 1 {
        return Err(PrivacyError::Agents(n));
    }
    let family = algorithm.family();
    budget.require(family)?;
    let per_agent = match family {
        NoiseFamily::Laplace => budget.mu / budget.epsilon,
        NoiseFamily::Gaussian => budget.mu / kappa_inv(budget.epsilon, budget.delta)?,
    };
    let sigma_xi = if algorithm.is_dpca() { per_agent / n as f64 } else { per_agent };
    Ok(NoisePlan::custom(algorithm, 0.0, 0.0, sigma_xi))
}

/// Designs the plan for any algorithm. Shuffle variants need their parameter.
pub fn design(
    algorithm: Algorithm,
    budget: &PrivacyBudget,
    n: usize,
    abar: f64,
    param: Option<DesignParameter>,
) -> Result<NoisePlan, PrivacyError> {
    match (algorithm, param) {
        (Algorithm::DishufGaussian, Some(DesignParameter::G(g))) => design_gaussian(budget, n, abar, g),
        (Algorithm::DishufGaussian, _) => Err(PrivacyError::Parameter("dishuf-gaussian needs g")),
        (Algorithm::DishufLaplace, Some(DesignParameter::H(h))) => design_laplace(budget, n, abar, h),
        (Algorithm::DishufLaplace, _) => Err(PrivacyError::Parameter("dishuf-laplace needs h")),
        (baseline, _) => design_baseline(budget, n, baseline),
    }
}

/// Result of a sufficient-condition check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs - lhs`; nonnegative when the condition holds exactly.
    pub margin: f64,
    /// Laplace only: the largest `h` compatible with `sigma_gamma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_star: Option<f64>,
}

/// Gaussian condition
/// `1/(n sg^2) + (n-1) alpha^2 / (sg^2 + (1-alpha)^2 se^2) <= (kappa^-1 / mu)^2`.
pub fn check_gaussian_condition(
    plan: &NoisePlan,
    budget: &PrivacyBudget,
    n: usize,
    abar: f64,
) -> Result<ConditionReport, PrivacyError> {
    if plan.family != NoiseFamily::Gaussian {
        return Err(PrivacyError::FamilyMismatch { plan: plan.family, algorithm: Algorithm::DishufGaussian });
    }
    budget.require(NoiseFamily::Gaussian)?;
    let a = check_n_abar(n, abar)?;
    let k = kappa_inv(budget.epsilon, budget.delta)?;
    let nf = n as f64;
    let sg2 = plan.sigma_gamma * plan.sigma_gamma;
    let masked = a.one_minus_alpha * plan.sigma_eta;
    let lhs = 1.0 / (nf * sg2) + (nf - 1.0) * a.alpha * a.alpha / (sg2 + masked * masked);
    let rhs = (k / budget.mu).powi(2);
    Ok(ConditionReport {
        holds: lhs <= rhs * (1.0 + CONDITION_RTOL),
        lhs,
        rhs,
        margin: rhs - lhs,
        h_star: None,
    })
}

/// Laplace condition: some `h > 1` has `sigma_gamma >= h mu / eps` and
/// `sigma_eta >= 2 mu h n sqrt(n-1) / ((1-alpha)(h-1) eps)`.
///
/// The second bound decreases in `h`, so it suffices to test the largest
/// admissible `h* = sigma_gamma eps / mu`. `lhs` is the required `sigma_eta`,
/// `rhs` the planned one.
pub fn check_laplace_condition(
    plan: &NoisePlan,
    budget: &PrivacyBudget,
    n: usize,
    abar: f64,
) -> Result<ConditionReport, PrivacyError> {
    if plan.family != NoiseFamily::Laplace {
        return Err(PrivacyError::FamilyMismatch { plan: plan.family, algorithm: Algorithm::DishufLaplace });
    }
    budget.require(NoiseFamily::Laplace)?;
    let a = check_n_abar(n, abar)?;
    let h_star = plan.sigma_gamma * budget.epsilon / budget.mu;
    let rhs = plan.sigma_eta;
    let lhs = if h_star > 1.0 {
        laplace_eta_bound(budget, n, &a, h_star).unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    Ok(ConditionReport {
        holds: h_star > 1.0 && lhs <= rhs * (1.0 + CONDITION_RTOL),
        lhs,
        rhs,
        margin: rhs - lhs,
        h_star: Some(h_star),
    })
}

/// Checks whichever condition matches the plan's family.
pub fn check_condition(
    plan: &NoisePlan,
    budget: &PrivacyBudget,
    n: usize,
    abar: f64,
) -> Result<ConditionReport, PrivacyError> {
    match plan.family {
        NoiseFamily::Gaussian => check_gaussian_condition(plan, budget, n, abar),
        NoiseFamily::Laplace => check_laplace_condition(plan, budget, n, abar),
    }
}

/// Limiting per-node mean-square error of `algorithm` under `plan`.
pub fn predict_mse(plan: &NoisePlan, n: usize, algorithm: Algorithm) -> Result<f64, PrivacyError> {
    if plan.family != algorithm.family() {
        return Err(PrivacyError::FamilyMismatch { plan: plan.family, algorithm });
    }
    if n < 1 {
        return Err(PrivacyError::Agents(n));
    }
    let nf = n as f64;
    let sg2 = plan.sigma_gamma * plan.sigma_gamma;
    let sx2 = plan.sigma_xi * plan.sigma_xi;
    Ok(match algorithm {
        // Every node converges to d* + mean(gamma).
        Algorithm::DishufGaussian => sg2 / nf,
        // Only one agent adds gamma: d* + gamma_k / n.
        Algorithm::DishufLaplace => 2.0 * sg2 / (nf * nf),
        Algorithm::OspGaussian => sx2 / nf,
        Algorithm::OspLaplace => 2.0 * sx2 / nf,
        Algorithm::DpcaGaussian => sx2,
        Algorithm::DpcaLaplace => 2.0 * sx2,
    })
}
