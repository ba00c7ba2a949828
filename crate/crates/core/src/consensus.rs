//! The consensus iteration `x_i <- x_i + sum_j w_ij (x_j - x_i)`, the four
//! initialisations and error metrics.
//!
//! Shuffle-based initial states have the form `base + zeta * Delta`, where
//! `base` is small (data plus residual noise) and `zeta * Delta` is a huge
//! offset that sums to exactly zero. Plain doubles lose the data under such an
//! offset, so three arithmetic modes are offered:
//!
//! - [`Arithmetic::Float`]: the textbook iteration on `f64` states.
//! - [`Arithmetic::Split`]: the iteration is linear, so `base` runs in `f64`
//!   while the offset runs as zero-sum integers moved along edges by
//!   antisymmetric flows. The offset's sum stays exactly zero at every step.
//! - [`Arithmetic::Rational`]: exact dyadic arithmetic on a common
//!   denominator, for validation.

use std::fmt::Write as _;

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::float::FloatCore;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dishuf::ShuffleOutcome;
use crate::netgraph::WeightedGraph;
use crate::noise::NoiseFamily;
use crate::numeric::{f64_to_rational, max_bits, ratio_to_f64};
use crate::privacy::{Algorithm, NoisePlan};
use crate::simnet::{Network, SimnetError};

/// Relative factor of the default stopping tolerance.
pub const DEFAULT_RTOL: f64 = 1e-9;
/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

const UNIT_BITS: u64 = 118;
const RESCALE_BELOW: i128 = 1 << 62;
const RESCALE_SHIFT: u32 = 56;
const FREEZE_RATIO: f64 = 1e-30;

#[derive(Debug, thiserror::Error)]
pub enum ConsensusError {
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("initial state contains a non-finite value")]
    NonFinite,
    #[error("offset does not sum to zero")]
    NotZeroSum,
    #[error("plan is for {plan}, but {expected} was requested")]
    Family { plan: Algorithm, expected: &'static str },
    #[error("k* = {k} must lie in 1..={n}")]
    KStar { k: usize, n: usize },
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error(transparent)]
    Network(#[from] SimnetError),
}

/// Arithmetic used by [`iterate`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arithmetic {
    Float,
    #[default]
    Split,
    Rational,
}

/// When to stop iterating.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// Stop once `max_i |x_i - mean(x(0))| < tol`. `None` picks the default
    /// tolerance of the arithmetic mode.
    Tolerance { tol: Option<f64>, max_iters: usize },
    /// Run exactly this many steps (agents without a global view).
    Fixed { iterations: usize },
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule::Tolerance { tol: None, max_iters: DEFAULT_MAX_ITERS }
    }
}

/// Steps the agents need to shrink the initial deviation below `tol`:
/// `ceil(ln(tol / ||x0 - mean||_inf) / ln beta)`.
pub fn fixed_iterations(beta: f64, tol: f64, x0: &[f64]) -> usize {
    let m = mean(x0);
    let dev = x0.iter().map(|x| (x - m).abs()).fold(0.0, f64::max);
    if dev < tol || beta <= 0.0 {
        return 0;
    }
    ((tol / dev).ln() / beta.ln()).ceil().max(0.0) as usize
}

/// An exactly zero-sum offset `units_i / denominator`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroSumOffset {
    pub units: Vec<BigInt>,
    pub denominator: BigUint,
}

impl ZeroSumOffset {
    pub fn new(units: Vec<BigInt>, denominator: BigUint) -> Result<Self, ConsensusError> {
        if !units.iter().sum::<BigInt>().is_zero() {
            return Err(ConsensusError::NotZeroSum);
        }
        Ok(ZeroSumOffset { units, denominator })
    }

    /// `zeta * Delta` of a shuffle: `Delta / (C K)`.
    pub fn from_shuffle(outcome: &ShuffleOutcome) -> Self {
        ZeroSumOffset {
            units: outcome.delta_int.clone(),
            denominator: &outcome.scale * &outcome.zeta_denominator,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        let d = BigInt::from(self.denominator.clone());
        self.units.iter().map(|u| ratio_to_f64(u, &d)).collect()
    }
}

/// Noise drawn while building an initial state.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseDraws {
    pub gamma: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
}

/// `x(0) = base + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialState {
    pub base: Vec<f64>,
    pub offset: Option<ZeroSumOffset>,
    pub algorithm: Option<Algorithm>,
    pub noise: NoiseDraws,
}

impl InitialState {
    pub fn plain(x0: Vec<f64>) -> Self {
        InitialState { base: x0, offset: None, algorithm: None, noise: NoiseDraws::default() }
    }

    pub fn n(&self) -> usize {
        self.base.len()
    }

    /// `x(0)` rounded to doubles.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.offset {
            None => self.base.clone(),
            Some(o) => self.base.iter().zip(o.to_f64()).map(|(b, u)| b + u).collect(),
        }
    }

    /// Exact `x(0)`.
    pub fn to_rational(&self) -> Vec<BigRational> {
        let den = self
            .offset
            .as_ref()
            .map(|o| BigInt::from(o.denominator.clone()));
        self.base
            .iter()
            .enumerate()
            .map(|(i, &b)| {
                let mut x = f64_to_rational(b);
                if let (Some(o), Some(d)) = (&self.offset, &den) {
                    x += BigRational::new(o.units[i].clone(), d.clone());
                }
                x
            })
            .collect()
    }

    /// Mean of `x(0)`. The offset sums to zero, so this is `mean(base)`.
    pub fn mean(&self) -> f64 {
        mean(&self.base)
    }

    fn validate(&self, n: usize) -> Result<(), ConsensusError> {
        if self.base.len() != n {
            return Err(ConsensusError::Length { what: "initial state", expected: n, got: self.base.len() });
        }
        if self.base.iter().any(|x| !x.is_finite()) {
            return Err(ConsensusError::NonFinite);
        }
        if let Some(o) = &self.offset {
            if o.units.len() != n {
                return Err(ConsensusError::Length { what: "offset", expected: n, got: o.units.len() });
            }
            if !o.units.iter().sum::<BigInt>().is_zero() {
                return Err(ConsensusError::NotZeroSum);
            }
        }
        Ok(())
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn check_len(what: &'static str, n: usize, got: usize) -> Result<(), ConsensusError> {
    if got != n {
        return Err(ConsensusError::Length { what, expected: n, got });
    }
    Ok(())
}

/// Draws the shuffle noise `eta` for a shuffle-based plan.
pub fn sample_eta<R: Rng + ?Sized>(plan: &NoisePlan, n: usize, rng: &mut R) -> Vec<f64> {
    plan.family.sample_vec(plan.sigma_eta, n, rng)
}

/// Gaussian shuffle start: `x_i(0) = d_i + zeta Delta_i + gamma_i`.
pub fn init_dishuf_gaussian<R: Rng + ?Sized>(
    data: &[f64],
    outcome: &ShuffleOutcome,
    plan: &NoisePlan,
    eta: &[f64],
    rng: &mut R,
) -> Result<InitialState, ConsensusError> {
    if plan.algorithm != Algorithm::DishufGaussian {
        return Err(ConsensusError::Family { plan: plan.algorithm, expected: "dishuf-gaussian" });
    }
    let n = data.len();
    check_len("shuffle outcome", n, outcome.n())?;
    let gamma = NoiseFamily::Gaussian.sample_vec(plan.sigma_gamma, n, rng);
    Ok(InitialState {
        base: data.iter().zip(&gamma).map(|(d, g)| d + g).collect(),
        offset: Some(ZeroSumOffset::from_shuffle(outcome)),
        algorithm: Some(Algorithm::DishufGaussian),
        noise: NoiseDraws { gamma, eta: eta.to_vec(), xi: Vec::new() },
    })
}

/// Laplace shuffle start: only agent `k_star` (1-based) adds `gamma ~ Lap(sigma_gamma)`.
pub fn init_dishuf_laplace<R: Rng + ?Sized>(
    data: &[f64],
    outcome: &ShuffleOutcome,
    plan: &NoisePlan,
    k_star: usize,
    eta: &[f64],
    rng: &mut R,
) -> Result<InitialState, ConsensusError> {
    if plan.algorithm != Algorithm::DishufLaplace {
        return Err(ConsensusError::Family { plan: plan.algorithm, expected: "dishuf-laplace" });
    }
    let n = data.len();
    check_len("shuffle outcome", n, outcome.n())?;
    if !(1..=n).contains(&k_star) {
        return Err(ConsensusError::KStar { k: k_star, n });
    }
    let mut gamma = vec![0.0; n];
    gamma[k_star - 1] = NoiseFamily::Laplace.sample(plan.sigma_gamma, rng);
    Ok(InitialState {
        base: data.iter().zip(&gamma).map(|(d, g)| d + g).collect(),
        offset: Some(ZeroSumOffset::from_shuffle(outcome)),
        algorithm: Some(Algorithm::DishufLaplace),
        noise: NoiseDraws { gamma, eta: eta.to_vec(), xi: Vec::new() },
    })
}

/// One-shot perturbation: `x_i(0) = d_i + xi_i`.
pub fn init_osp<R: Rng + ?Sized>(data: &[f64], plan: &NoisePlan, rng: &mut R) -> Result<InitialState, ConsensusError> {
    if !plan.algorithm.is_osp() {
        return Err(ConsensusError::Family { plan: plan.algorithm, expected: "osp-*" });
    }
    let xi = plan.family.sample_vec(plan.sigma_xi, data.len(), rng);
    Ok(InitialState {
        base: data.iter().zip(&xi).map(|(d, x)| d + x).collect(),
        offset: None,
        algorithm: Some(plan.algorithm),
        noise: NoiseDraws { gamma: Vec::new(), eta: Vec::new(), xi },
    })
}

/// Centralised baseline: the published value `mean(d) + xi`.
pub fn run_dpca<R: Rng + ?Sized>(data: &[f64], plan: &NoisePlan, rng: &mut R) -> Result<f64, ConsensusError> {
    if !plan.algorithm.is_dpca() {
        return Err(ConsensusError::Family { plan: plan.algorithm, expected: "dpca-*" });
    }
    Ok(mean(data) + plan.family.sample(plan.sigma_xi, rng))
}

/// One plain step of the iteration in doubles, via antisymmetric edge flows.
pub fn step(graph: &WeightedGraph, x: &[f64]) -> Vec<f64> {
    let mut next = x.to_vec();
    for &(i, j, w) in graph.edges() {
        let f = w * (x[j] - x[i]);
        next[i] += f;
        next[j] -= f;
    }
    next
}

/// Euclidean norm of `x - mean(x)`.
pub fn disagreement(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>().sqrt()
}

/// Outcome of [`iterate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusRun {
    pub algorithm: Option<Algorithm>,
    pub initial: Vec<f64>,
    pub final_state: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `mean(x(0))`, the limit of every state.
    pub target: f64,
    pub tol: f64,
    /// `(t, x(t))` every `record_every` steps, including `t = 0` and the end.
    pub trajectory: Vec<(usize, Vec<f64>)>,
    /// Largest `|sum x(t+1) - sum x(t)|` seen, relative to `||x(0)||_1`.
    pub max_sum_drift: f64,
    pub noise: NoiseDraws,
}

impl ConsensusRun {
    /// Thinned trajectory as CSV: `t,x_1,...,x_n`.
    pub fn trajectory_csv(&self) -> String {
        let n = self.initial.len();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",x_{i}");
        }
        out.push('\n');
        for (t, x) in &self.trajectory {
            let _ = write!(out, "{t}");
            for v in x {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Mean-square error per node against `d_star` along the trajectory.
    pub fn error_curve(&self, d_star: f64) -> Vec<(usize, f64)> {
        self.trajectory
            .iter()
            .map(|(t, x)| (*t, x.iter().map(|v| (v - d_star).powi(2)).sum::<f64>() / x.len() as f64))
            .collect()
    }
}

/// Optional knobs of [`iterate`].
#[derive(Default)]
pub struct IterateOptions<'a> {
    /// Keep every k-th state (0 = only start and end).
    pub record_every: usize,
    /// Route each round's states through this network's transcript.
    pub network: Option<&'a mut Network>,
}

/// Runs the iteration from `init` until `stop` fires.
pub fn iterate(
    graph: &WeightedGraph,
    init: &InitialState,
    stop: StopRule,
    arithmetic: Arithmetic,
    options: IterateOptions<'_>,
) -> Result<ConsensusRun, ConsensusError> {
    let n = graph.n();
    init.validate(n)?;
    let initial = init.to_f64();
    let scale_base = match arithmetic {
        Arithmetic::Float => &initial,
        Arithmetic::Split | Arithmetic::Rational => &init.base,
    };
    let default_tol = DEFAULT_RTOL * (1.0 + scale_base.iter().fold(0.0f64, |a, x| a.max(x.abs())));
    let (tol, max_iters, fixed) = match stop {
        StopRule::Tolerance { tol, max_iters } => {
            let tol = tol.unwrap_or(default_tol);
            if !(tol > 0.0) {
                return Err(ConsensusError::Tolerance(tol));
            }
            (tol, max_iters, false)
        }
        StopRule::Fixed { iterations } => (default_tol, iterations, true),
    };
    let target = match arithmetic {
        Arithmetic::Float => mean(&initial),
        _ => init.mean(),
    };

    let mut engine: Box<dyn Engine> = match arithmetic {
        Arithmetic::Float => Box::new(FloatEngine { x: initial.clone() }),
        Arithmetic::Split => Box::new(SplitEngine::new(init)),
        Arithmetic::Rational => Box::new(RationalEngine::new(graph, init)),
    };

    let IterateOptions { record_every, mut network } = options;
    let mut trajectory = vec![(0, initial.clone())];
    let l1: f64 = initial.iter().map(|x| x.abs()).sum::<f64>().max(f64::MIN_POSITIVE);
    let mut max_sum_drift = 0.0f64;
    let mut x = initial.clone();
    let mut prev_sum = engine.sum_hint(&x);
    let mut t = 0usize;
    let deviation = |x: &[f64]| x.iter().map(|v| (v - target).abs()).fold(0.0, f64::max);
    let mut converged = !fixed && deviation(&x) < tol;
    while !converged && t < max_iters {
        if let Some(net) = network.as_deref_mut() {
            net.broadcast_states(&x)?;
        }
        engine.advance(graph);
        t += 1;
        x = engine.state();
        let sum = engine.sum_hint(&x);
        max_sum_drift = max_sum_drift.max((sum - prev_sum).abs() / l1);
        prev_sum = sum;
        if record_every > 0 && t.is_multiple_of(record_every) {
            trajectory.push((t, x.clone()));
        }
        if !fixed {
            converged = deviation(&x) < tol;
        }
    }
    if fixed {
        converged = deviation(&x) < tol;
    }
    if trajectory.last().map(|(s, _)| *s) != Some(t) {
        trajectory.push((t, x.clone()));
    }
    Ok(ConsensusRun {
        algorithm: init.algorithm,
        initial,
        final_state: x,
        iterations: t,
        converged,
        target,
        tol,
        trajectory,
        max_sum_drift,
        noise: init.noise.clone(),
    })
}

trait Engine {
    fn advance(&mut self, graph: &WeightedGraph);
    fn state(&self) -> Vec<f64>;
    /// Sum of the state as the engine sees it (exact where possible).
    fn sum_hint(&self, x: &[f64]) -> f64 {
        x.iter().sum()
    }
}

struct FloatEngine {
    x: Vec<f64>,
}

impl Engine for FloatEngine {
    fn advance(&mut self, graph: &WeightedGraph) {
        self.x = step(graph, &self.x);
    }

    fn state(&self) -> Vec<f64> {
        self.x.clone()
    }
}

/// `x = v + units * 2^exp / D` with `sum units = 0` exactly.
struct SplitEngine {
    v: Vec<f64>,
    units: Vec<i128>,
    /// `2^exp / D`.
    unit_value: f64,
    frozen: bool,
}

impl SplitEngine {
    fn new(init: &InitialState) -> Self {
        let n = init.n();
        let Some(offset) = &init.offset else {
            return SplitEngine { v: init.base.clone(), units: vec![0; n], unit_value: 0.0, frozen: true };
        };
        let shift = max_bits(&offset.units).saturating_sub(UNIT_BITS);
        let mut big: Vec<BigInt> = offset.units.iter().map(|u| round_shift(u, shift)).collect();
        let residual: BigInt = big.iter().sum();
        if !residual.is_zero() {
            let k = (0..n).max_by_key(|&i| big[i].abs()).unwrap_or(0);
            big[k] -= residual;
        }
        let units: Vec<i128> = big.iter().map(|u| u.to_i128().expect("fits after shift")).collect();
        let d = offset.denominator.to_f64().unwrap_or(f64::INFINITY);
        let unit_value = libm::ldexp(1.0 / d, shift as i32);
        let mut engine = SplitEngine { v: init.base.clone(), units, unit_value, frozen: false };
        engine.maybe_rescale();
        engine
    }

    fn maybe_rescale(&mut self) {
        loop {
            let max = self.units.iter().map(|u| u.unsigned_abs()).max().unwrap_or(0);
            let vmax = self.v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            if max == 0 || (max as f64) * self.unit_value < FREEZE_RATIO * (1.0 + vmax) {
                self.frozen = true;
                return;
            }
            if max >= RESCALE_BELOW as u128 {
                return;
            }
            for u in self.units.iter_mut() {
                *u <<= RESCALE_SHIFT;
            }
            self.unit_value = libm::ldexp(self.unit_value, -(RESCALE_SHIFT as i32));
        }
    }
}

fn round_shift(u: &BigInt, shift: u64) -> BigInt {
    if shift == 0 {
        return u.clone();
    }
    let half = BigInt::one() << (shift - 1);
    let mag = (u.abs() + half) >> shift;
    if u.is_negative() {
        -mag
    } else {
        mag
    }
}

impl Engine for SplitEngine {
    fn advance(&mut self, graph: &WeightedGraph) {
        self.v = step(graph, &self.v);
        if self.frozen {
            return;
        }
        let mut flows = Vec::with_capacity(graph.edge_count());
        for &(i, j, w) in graph.edges() {
            let diff = (self.units[j] - self.units[i]) as f64;
            flows.push((i, j, (w * diff).round() as i128));
        }
        for (i, j, f) in flows {
            self.units[i] += f;
            self.units[j] -= f;
        }
        self.maybe_rescale();
    }

    fn state(&self) -> Vec<f64> {
        self.v
            .iter()
            .zip(&self.units)
            .map(|(v, &u)| v + u as f64 * self.unit_value)
            .collect()
    }

    fn sum_hint(&self, _x: &[f64]) -> f64 {
        // The offset contributes exactly zero.
        self.v.iter().sum()
    }
}

/// `x_i = X_i / den` with dyadic weights `w = W / 2^s`.
struct RationalEngine {
    numer: Vec<BigInt>,
    den: BigInt,
    weights: Vec<(usize, usize, BigInt)>,
    shift: usize,
}

impl RationalEngine {
    fn new(graph: &WeightedGraph, init: &InitialState) -> Self {
        let shift = graph
            .edges()
            .iter()
            .map(|&(_, _, w)| {
                let (_, exp, _) = FloatCore::integer_decode(w);
                (-i32::from(exp)).max(0) as usize
            })
            .max()
            .unwrap_or(0);
        let weights = graph
            .edges()
            .iter()
            .map(|&(i, j, w)| {
                let r = f64_to_rational(w) * BigRational::from_integer(BigInt::one() << shift);
                debug_assert!(r.is_integer());
                (i, j, r.to_integer())
            })
            .collect();
        let x0 = init.to_rational();
        let den = x0.iter().fold(BigInt::one(), |acc, x| acc.lcm(x.denom()));
        let numer = x0.iter().map(|x| x.numer() * (&den / x.denom())).collect();
        RationalEngine { numer, den, weights, shift }
    }

    fn exact_sum(&self) -> BigRational {
        BigRational::new(self.numer.iter().sum(), self.den.clone())
    }
}

impl Engine for RationalEngine {
    fn advance(&mut self, _graph: &WeightedGraph) {
        let mut next: Vec<BigInt> = self.numer.iter().map(|x| x << self.shift).collect();
        for (i, j, w) in &self.weights {
            let f = w * (&self.numer[*j] - &self.numer[*i]);
            next[*i] += &f;
            next[*j] -= f;
        }
        self.numer = next;
        self.den <<= self.shift;
    }

    fn state(&self) -> Vec<f64> {
        self.numer.iter().map(|x| ratio_to_f64(x, &self.den)).collect()
    }

    fn sum_hint(&self, _x: &[f64]) -> f64 {
        let s = self.exact_sum();
        ratio_to_f64(s.numer(), s.denom())
    }
}

/// Exact sum of the state after `steps` rational iterations (for tests of
/// exact sum preservation).
pub fn rational_sums(graph: &WeightedGraph, init: &InitialState, steps: usize) -> Vec<BigRational> {
    let mut e = RationalEngine::new(graph, init);
    let mut out = vec![e.exact_sum()];
    for _ in 0..steps {
        e.advance(graph);
        out.push(e.exact_sum());
    }
    out
}

/// Squared-error summary of final states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub per_node: Vec<f64>,
    /// `sum_i (x_i - d*)^2`.
    pub network_error: f64,
    /// `network_error / n`.
    pub mean_per_node: f64,
    pub converged: bool,
}

pub fn error_metrics(run: &ConsensusRun, d_star: f64) -> ErrorMetrics {
    metrics_of(&run.final_state, d_star, run.converged)
}

/// Metrics for a single published scalar (centralised baseline).
pub fn scalar_error_metrics(x: f64, d_star: f64) -> ErrorMetrics {
    metrics_of(&[x], d_star, true)
}

fn metrics_of(x: &[f64], d_star: f64, converged: bool) -> ErrorMetrics {
    let per_node: Vec<f64> = x.iter().map(|v| (v - d_star).powi(2)).collect();
    let network_error: f64 = per_node.iter().sum();
    ErrorMetrics { mean_per_node: network_error / x.len() as f64, network_error, per_node, converged }
}
