//! Configuration, Monte Carlo trials, parameter sweeps and result files.
//!
//! Trial `k` of an experiment with master seed `s` draws all of its
//! randomness from the streams of `TrialStreams::new(s, k)`, so any trial can
//! be replayed on its own and the aggregate does not depend on scheduling.

use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{
    error_metrics, init_dishuf_gaussian, init_dishuf_laplace, init_osp, iterate, run_dpca, sample_eta,
    scalar_error_metrics, Arithmetic, ConsensusError, ConsensusRun, IterateOptions, StopRule, DEFAULT_MAX_ITERS,
};
use crate::dishuf::{run_dishuf, ShuffleBackend, ShuffleConfig, ShuffleError, ShuffleOutcome};
use crate::netgraph::{GraphError, GraphSpec, WeightedGraph};
use crate::paillier::{FixedPointCodec, DEFAULT_KEY_BITS, DEFAULT_SCALE_LOG2};
use crate::privacy::{
    check_condition, design, predict_mse, Algorithm, ConditionReport, DesignParameter, NoisePlan, PrivacyBudget,
    PrivacyError,
};
use crate::simnet::Network;
use crate::streams::{stream_rng, Purpose, TrialStreams, DATA_STREAM};

/// Mean of the reference data set used throughout the examples.
pub const REFERENCE_MEAN: f64 = 13.1336;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Shuffle(#[from] ShuffleError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
}

/// Agent data: explicit values or a seeded random draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSpec {
    Explicit(Vec<f64>),
    Random {
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_mean")]
        mean: f64,
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn default_mean() -> f64 {
    REFERENCE_MEAN
}

fn default_spread() -> f64 {
    10.0
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Random { seed: 0, mean: REFERENCE_MEAN, spread: default_spread() }
    }
}

impl DataSpec {
    /// Values for `n` agents. Random draws are uniform on
    /// `mean +- spread`, then shifted so their average is `mean`.
    pub fn values(&self, n: usize) -> Result<Vec<f64>, ExperimentError> {
        match self {
            DataSpec::Explicit(v) => {
                if v.len() != n {
                    return Err(ExperimentError::Config(format!("data has {} values but the graph has {n} agents", v.len())));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(ExperimentError::Config("data values must be finite".into()));
                }
                Ok(v.clone())
            }
            DataSpec::Random { seed, mean, spread } => {
                if !(spread.is_finite() && *spread >= 0.0 && mean.is_finite()) {
                    return Err(ExperimentError::Config("random data needs finite mean and spread >= 0".into()));
                }
                let mut rng = stream_rng(*seed, DATA_STREAM);
                let mut v: Vec<f64> = (0..n).map(|_| mean + spread * (2.0 * rng.gen::<f64>() - 1.0)).collect();
                let shift = mean - v.iter().sum::<f64>() / n as f64;
                v.iter_mut().for_each(|x| *x += shift);
                Ok(v)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub kind: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    /// Agent adding the Laplace residual noise (1-based).
    #[serde(default = "default_k_star")]
    pub k_star: usize,
    #[serde(default = "default_abar")]
    pub abar: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_xi: Option<f64>,
}

fn default_k_star() -> usize {
    1
}

fn default_abar() -> u64 {
    10_000
}

impl AlgorithmSpec {
    pub fn new(kind: Algorithm) -> Self {
        AlgorithmSpec {
            kind,
            g: None,
            h: None,
            k_star: 1,
            abar: default_abar(),
            sigma_gamma: None,
            sigma_eta: None,
            sigma_xi: None,
        }
    }

    pub fn param(&self) -> Option<DesignParameter> {
        match self.kind {
            Algorithm::DishufGaussian => self.g.map(DesignParameter::G),
            Algorithm::DishufLaplace => self.h.map(DesignParameter::H),
            _ => None,
        }
    }

    fn has_overrides(&self) -> bool {
        self.sigma_gamma.is_some() || self.sigma_eta.is_some() || self.sigma_xi.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaillierSpec {
    #[serde(default = "default_key_bits")]
    pub key_bits: u64,
    #[serde(default = "default_scale_log2")]
    pub scale_log2: u32,
    #[serde(default)]
    pub backend: ShuffleBackend,
}

fn default_key_bits() -> u64 {
    DEFAULT_KEY_BITS
}

fn default_scale_log2() -> u32 {
    DEFAULT_SCALE_LOG2
}

impl Default for PaillierSpec {
    fn default() -> Self {
        PaillierSpec { key_bits: DEFAULT_KEY_BITS, scale_log2: DEFAULT_SCALE_LOG2, backend: ShuffleBackend::Paillier }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    /// Run exactly this many steps instead of the tolerance rule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_iterations: Option<usize>,
    #[serde(default)]
    pub arithmetic: Arithmetic,
    #[serde(default)]
    pub record_every: usize,
}

fn default_trials() -> usize {
    1
}

fn default_max_iters() -> usize {
    DEFAULT_MAX_ITERS
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            trials: 1,
            seed: None,
            tol: None,
            max_iters: DEFAULT_MAX_ITERS,
            fixed_iterations: None,
            arithmetic: Arithmetic::Split,
            record_every: 0,
        }
    }
}

impl RunSpec {
    pub fn stop_rule(&self) -> StopRule {
        match self.fixed_iterations {
            Some(iterations) => StopRule::Fixed { iterations },
            None => StopRule::Tolerance { tol: self.tol, max_iters: self.max_iters },
        }
    }
}

/// A complete experiment description (the JSON config file).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    #[serde(default)]
    pub data: DataSpec,
    pub privacy: PrivacyBudget,
    pub algorithm: AlgorithmSpec,
    #[serde(default)]
    pub paillier: PaillierSpec,
    #[serde(default)]
    pub run: RunSpec,
}

impl ExperimentConfig {
    /// The evaluation setup: 10-agent cycle with weight 0.3, budget
    /// `(10, 0.1, 5)`, `abar = 10^4`.
    pub fn reference(algorithm: Algorithm) -> Self {
        ExperimentConfig {
            graph: GraphSpec::cycle(10, 0.3),
            data: DataSpec::default(),
            privacy: PrivacyBudget { epsilon: 10.0, delta: 0.1, mu: 5.0 },
            algorithm: AlgorithmSpec::new(algorithm),
            paillier: PaillierSpec::default(),
            run: RunSpec::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(0)
    }

    pub fn prepare(&self) -> Result<Prepared, ExperimentError> {
        Prepared::new(self.clone())
    }
}

/// A validated configuration with everything derived once.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub config: ExperimentConfig,
    pub graph: Arc<WeightedGraph>,
    pub data: Vec<f64>,
    pub d_star: f64,
    pub plan: NoisePlan,
    pub shuffle: ShuffleConfig,
}

impl Prepared {
    pub fn new(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        if config.run.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        config.privacy.validate()?;
        let graph = Arc::new(config.graph.build()?);
        let n = graph.n();
        let data = config.data.values(n)?;
        let d_star = data.iter().sum::<f64>() / n as f64;
        let alg = &config.algorithm;
        if alg.kind.is_dishuf() && alg.abar < 2 {
            return Err(ExperimentError::Config(format!("abar must be at least 2, got {}", alg.abar)));
        }
        if alg.kind == Algorithm::DishufLaplace && !(1..=n).contains(&alg.k_star) {
            return Err(ExperimentError::Config(format!("k_star = {} must lie in 1..={n}", alg.k_star)));
        }
        let plan = make_plan(&config, n)?;
        let shuffle = ShuffleConfig {
            abar: alg.abar,
            key_bits: config.paillier.key_bits,
            codec: FixedPointCodec::with_log2(config.paillier.scale_log2),
            backend: config.paillier.backend,
        };
        Ok(Prepared { config, graph, data, d_star, plan, shuffle })
    }

    pub fn n(&self) -> usize {
        self.graph.n()
    }

    pub fn algorithm(&self) -> Algorithm {
        self.config.algorithm.kind
    }

    pub fn theory(&self) -> Result<f64, ExperimentError> {
        Ok(predict_mse(&self.plan, self.n(), self.algorithm())?)
    }

    /// The privacy condition for shuffle-based plans.
    pub fn condition(&self) -> Result<ConditionReport, ExperimentError> {
        if !self.algorithm().is_dishuf() {
            return Err(ExperimentError::Config(format!("{} has no shuffle condition to check", self.algorithm())));
        }
        Ok(check_condition(&self.plan, &self.config.privacy, self.n(), self.config.algorithm.abar as f64)?)
    }
}

fn make_plan(config: &ExperimentConfig, n: usize) -> Result<NoisePlan, ExperimentError> {
    let alg = &config.algorithm;
    let mut plan = if alg.has_overrides() && alg.param().is_none() {
        NoisePlan::custom(alg.kind, 0.0, 0.0, 0.0)
    } else {
        design(alg.kind, &config.privacy, n, alg.abar as f64, alg.param())?
    };
    for (value, slot) in [
        (alg.sigma_gamma, &mut plan.sigma_gamma),
        (alg.sigma_eta, &mut plan.sigma_eta),
        (alg.sigma_xi, &mut plan.sigma_xi),
    ] {
        if let Some(v) = value {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(ExperimentError::Config(format!("noise scale {v} must be finite and >= 0")));
            }
            *slot = v;
        }
    }
    Ok(plan)
}

/// One trial's outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: u64,
    pub algorithm: Algorithm,
    /// Final states (a single published value for the centralised baseline).
    pub final_state: Vec<f64>,
    /// Mean over nodes of `(x_i - d*)^2`.
    pub sq_error: f64,
    /// `sum_i (x_i - d*)^2`.
    pub network_error: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Full artefacts of a single trial.
pub struct TrialDetail {
    pub result: TrialResult,
    pub run: Option<ConsensusRun>,
    pub shuffle: Option<ShuffleOutcome>,
}

/// Runs trial `index` (no transcript).
pub fn run_trial(prepared: &Prepared, index: u64) -> Result<TrialResult, ExperimentError> {
    let mut net = Network::without_capture(prepared.graph.clone());
    Ok(run_trial_on(prepared, index, &mut net, false)?.result)
}

/// Runs trial `index` through `network`, optionally routing consensus
/// rounds through it as well.
pub fn run_trial_on(
    prepared: &Prepared,
    index: u64,
    network: &mut Network,
    consensus_messages: bool,
) -> Result<TrialDetail, ExperimentError> {
    let streams = TrialStreams::new(prepared.config.seed(), index);
    let plan = &prepared.plan;
    let data = &prepared.data;
    let algorithm = prepared.algorithm();
    let n = prepared.n();

    if algorithm.is_dpca() {
        let x = run_dpca(data, plan, &mut streams.rng(Purpose::Gamma))?;
        let m = scalar_error_metrics(x, prepared.d_star);
        return Ok(TrialDetail {
            result: TrialResult {
                trial: index,
                algorithm,
                final_state: vec![x],
                sq_error: m.mean_per_node,
                network_error: m.network_error,
                iterations: 0,
                converged: true,
            },
            run: None,
            shuffle: None,
        });
    }

    let (init, shuffle) = if algorithm.is_dishuf() {
        let eta = sample_eta(plan, n, &mut streams.rng(Purpose::Eta));
        let outcome = run_dishuf(
            network,
            data,
            &eta,
            &prepared.shuffle,
            &mut streams.rng(Purpose::Gains),
            &mut streams.rng(Purpose::Crypto),
        )?;
        let mut gamma_rng = streams.rng(Purpose::Gamma);
        let init = match algorithm {
            Algorithm::DishufGaussian => init_dishuf_gaussian(data, &outcome, plan, &eta, &mut gamma_rng)?,
            _ => init_dishuf_laplace(data, &outcome, plan, prepared.config.algorithm.k_star, &eta, &mut gamma_rng)?,
        };
        (init, Some(outcome))
    } else {
        (init_osp(data, plan, &mut streams.rng(Purpose::Gamma))?, None)
    };

    let options = IterateOptions {
        record_every: prepared.config.run.record_every,
        network: if consensus_messages { Some(network) } else { None },
    };
    let run = iterate(&prepared.graph, &init, prepared.config.run.stop_rule(), prepared.config.run.arithmetic, options)?;
    let m = error_metrics(&run, prepared.d_star);
    Ok(TrialDetail {
        result: TrialResult {
            trial: index,
            algorithm,
            final_state: run.final_state.clone(),
            sq_error: m.mean_per_node,
            network_error: m.network_error,
            iterations: run.iterations,
            converged: run.converged,
        },
        run: Some(run),
        shuffle,
    })
}

/// Monte Carlo aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub param_name: String,
    pub param_value: Option<f64>,
    pub trials: usize,
    pub sq_errors: Vec<f64>,
    pub mse_mean: f64,
    /// Sample standard deviation over `sqrt(trials)`.
    pub mse_se: f64,
    pub mse_theory: f64,
    pub network_error_mean: f64,
    pub network_error_se: f64,
    pub iters_mean: f64,
    pub iters_max: usize,
    pub unconverged: usize,
    pub plan: NoisePlan,
    pub config: ExperimentConfig,
}

impl Summary {
    /// `|mse_mean - mse_theory| / mse_se`.
    pub fn z_score(&self) -> f64 {
        (self.mse_mean - self.mse_theory).abs() / self.mse_se
    }
}

/// Mean and standard error, summed in index order.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

fn param_of(config: &ExperimentConfig) -> (String, Option<f64>) {
    match config.algorithm.param() {
        Some(DesignParameter::G(g)) => ("g".into(), Some(g)),
        Some(DesignParameter::H(h)) => ("h".into(), Some(h)),
        None => (String::new(), None),
    }
}

/// Runs all trials (in parallel) and aggregates them.
pub fn monte_carlo(prepared: &Prepared) -> Result<Summary, ExperimentError> {
    let trials = prepared.config.run.trials as u64;
    let results: Vec<TrialResult> = (0..trials)
        .into_par_iter()
        .map(|k| run_trial(prepared, k))
        .collect::<Result<_, _>>()?;
    let (param_name, param_value) = param_of(&prepared.config);
    summarise(prepared, &results, param_name, param_value)
}

fn summarise(
    prepared: &Prepared,
    results: &[TrialResult],
    param_name: String,
    param_value: Option<f64>,
) -> Result<Summary, ExperimentError> {
    let sq: Vec<f64> = results.iter().map(|r| r.sq_error).collect();
    let net: Vec<f64> = results.iter().map(|r| r.network_error).collect();
    let (mse_mean, mse_se) = mean_se(&sq);
    let (network_error_mean, network_error_se) = mean_se(&net);
    let iters_mean = results.iter().map(|r| r.iterations as f64).sum::<f64>() / results.len() as f64;
    Ok(Summary {
        algorithm: prepared.algorithm(),
        param_name,
        param_value,
        trials: results.len(),
        sq_errors: sq,
        mse_mean,
        mse_se,
        mse_theory: prepared.theory()?,
        network_error_mean,
        network_error_se,
        iters_mean,
        iters_max: results.iter().map(|r| r.iterations).max().unwrap_or(0),
        unconverged: results.iter().filter(|r| !r.converged).count(),
        plan: prepared.plan.clone(),
        config: prepared.config.clone(),
    })
}

/// Parameter swept by [`sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    G,
    H,
    Epsilon,
    N,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::G => "g",
            SweepParam::H => "h",
            SweepParam::Epsilon => "epsilon",
            SweepParam::N => "n",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "g" => Ok(SweepParam::G),
            "h" => Ok(SweepParam::H),
            "epsilon" | "eps" => Ok(SweepParam::Epsilon),
            "n" => Ok(SweepParam::N),
            other => Err(ExperimentError::Config(format!("unknown sweep parameter `{other}` (expected g, h, epsilon or n)"))),
        }
    }
}

/// One row of a sweep: a summary or the reason the value was rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub param_name: String,
    pub param_value: Option<f64>,
    pub summary: Option<Summary>,
    pub error: Option<String>,
}

/// Sweeps `param` over `values`.
///
/// `g`/`h` sweeps produce one row per value plus a single centralised
/// baseline row. `epsilon`/`n` sweeps produce, per value, rows for the
/// configured shuffle algorithm and both baselines of its family.
pub fn sweep(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>, ExperimentError> {
    let kind = base.algorithm.kind;
    match param {
        SweepParam::G if kind != Algorithm::DishufGaussian => {
            return Err(ExperimentError::Config("sweeping g needs algorithm dishuf-gaussian".into()))
        }
        SweepParam::H if kind != Algorithm::DishufLaplace => {
            return Err(ExperimentError::Config("sweeping h needs algorithm dishuf-laplace".into()))
        }
        _ => {}
    }
    let (osp, dpca) = kind.baselines();
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        match param {
            SweepParam::G => cfg.algorithm.g = Some(v),
            SweepParam::H => cfg.algorithm.h = Some(v),
            SweepParam::Epsilon => cfg.privacy.epsilon = v,
            SweepParam::N => {
                if !(v >= 2.0 && v.fract() == 0.0) {
                    rows.push(error_row(kind, param, v, "n must be an integer >= 2".into()));
                    continue;
                }
                cfg.graph.n = v as usize;
            }
        }
        let algorithms: Vec<Algorithm> = match param {
            SweepParam::G | SweepParam::H => vec![kind],
            _ if kind.is_dishuf() => vec![kind, osp, dpca],
            _ => vec![kind],
        };
        for alg in algorithms {
            let mut c = cfg.clone();
            if alg != kind {
                c.algorithm = AlgorithmSpec { kind: alg, ..AlgorithmSpec::new(alg) };
            }
            rows.push(row_for(c, alg, param.name(), Some(v)));
        }
    }
    if matches!(param, SweepParam::G | SweepParam::H) {
        let mut c = base.clone();
        c.algorithm = AlgorithmSpec::new(dpca);
        rows.push(row_for(c, dpca, "", None));
    }
    Ok(rows)
}

fn error_row(alg: Algorithm, param: SweepParam, v: f64, error: String) -> SweepRow {
    SweepRow { algorithm: alg, param_name: param.name().into(), param_value: Some(v), summary: None, error: Some(error) }
}

fn row_for(config: ExperimentConfig, alg: Algorithm, name: &str, value: Option<f64>) -> SweepRow {
    let result = config.prepare().and_then(|p| {
        let mut s = monte_carlo(&p)?;
        s.param_name = name.to_string();
        s.param_value = value;
        Ok(s)
    });
    match result {
        Ok(s) => SweepRow { algorithm: alg, param_name: name.into(), param_value: value, summary: Some(s), error: None },
        Err(e) => SweepRow {
            algorithm: alg,
            param_name: name.into(),
            param_value: value,
            summary: None,
            error: Some(e.to_string()),
        },
    }
}

pub const CSV_HEADER: &str = "algorithm,param_name,param_value,trials,mse_mean,mse_se,mse_theory,iters_mean";

/// CSV with the fixed column set; rejected rows keep their key columns and
/// leave the metrics empty.
pub fn write_csv<W: Write>(rows: &[SweepRow], mut w: W) -> io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        let value = r.param_value.map(|v| v.to_string()).unwrap_or_default();
        match &r.summary {
            Some(s) => writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.algorithm, r.param_name, value, s.trials, s.mse_mean, s.mse_se, s.mse_theory, s.iters_mean
            )?,
            None => writeln!(w, "{},{},{},0,,,,", r.algorithm, r.param_name, value)?,
        }
    }
    Ok(())
}

pub fn write_json<W: Write>(rows: &[SweepRow], w: W) -> Result<(), ExperimentError> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}

pub fn read_json(text: &str) -> Result<Vec<SweepRow>, ExperimentError> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn emit(rows: &[SweepRow], dir: &Path, stem: &str) -> Result<(), ExperimentError> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
    write_csv(rows, io::BufWriter::new(csv))?;
    let json = std::fs::File::create(dir.join(format!("{stem}.json")))?;
    write_json(rows, io::BufWriter::new(json))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(alg: Algorithm) -> ExperimentConfig {
        let mut c = ExperimentConfig::reference(alg);
        c.paillier.backend = ShuffleBackend::Plaintext;
        c.run.seed = Some(11);
        c.run.trials = 20;
        c.algorithm.g = Some(0.01);
        c.algorithm.h = Some(2.0);
        c
    }

    #[test]
    fn random_data_is_recentred() {
        let v = DataSpec::default().values(10).unwrap();
        let m = v.iter().sum::<f64>() / 10.0;
        assert!((m - REFERENCE_MEAN).abs() < 1e-13);
        assert!(DataSpec::Explicit(vec![1.0; 3]).values(10).is_err());
    }

    #[test]
    fn zero_noise_trial_has_zero_error() {
        let mut c = quick(Algorithm::DishufGaussian);
        c.algorithm.sigma_gamma = Some(0.0);
        c.algorithm.sigma_eta = Some(0.0);
        let p = c.prepare().unwrap();
        let r = run_trial(&p, 0).unwrap();
        assert!(r.sq_error < 1e-14);
        assert!(r.converged);
    }

    #[test]
    fn trials_are_reproducible() {
        let p = quick(Algorithm::DishufLaplace).prepare().unwrap();
        assert_eq!(run_trial(&p, 3).unwrap(), run_trial(&p, 3).unwrap());
        assert_ne!(run_trial(&p, 3).unwrap(), run_trial(&p, 4).unwrap());
    }

    #[test]
    fn gaussian_trial_error_is_mean_gamma_squared() {
        let p = quick(Algorithm::DishufGaussian).prepare().unwrap();
        let mut net = Network::without_capture(p.graph.clone());
        let d = run_trial_on(&p, 2, &mut net, false).unwrap();
        let gamma = &d.run.as_ref().unwrap().noise.gamma;
        let mg = gamma.iter().sum::<f64>() / 10.0;
        assert!((d.result.sq_error - mg * mg).abs() < 1e-12);
    }

    #[test]
    fn config_json_roundtrip_and_strictness() {
        let c = quick(Algorithm::DishufGaussian);
        assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        let bad = c.to_json().replacen("\"trials\"", "\"trails\"", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
        let minimal = r#"{"graph":{"kind":"cycle","n":10,"weight":{"uniform":0.3}},
            "privacy":{"epsilon":10,"delta":0.1,"mu":5},
            "algorithm":{"kind":"dishuf-laplace","h":2}}"#;
        let m = ExperimentConfig::from_json(minimal).unwrap();
        assert_eq!(m.algorithm.abar, 10_000);
        assert_eq!(m.paillier.key_bits, 1024);
        assert_eq!(m.run.arithmetic, Arithmetic::Split);
    }

    #[test]
    fn sweep_rows_and_files() {
        let c = quick(Algorithm::DishufGaussian);
        let rows = sweep(&c, SweepParam::G, &[3.0, 2.0, 1.0, 0.01]).unwrap();
        assert_eq!(rows.len(), 5);
        assert_eq!(rows[4].algorithm, Algorithm::DpcaGaussian);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(CSV_HEADER));
        let mut json = Vec::new();
        write_json(&rows, &mut json).unwrap();
        assert_eq!(read_json(std::str::from_utf8(&json).unwrap()).unwrap(), rows);
        let mut again = Vec::new();
        write_csv(&sweep(&c, SweepParam::G, &[3.0, 2.0, 1.0, 0.01]).unwrap(), &mut again).unwrap();
        assert_eq!(again, text.into_bytes());
    }

    #[test]
    fn sweep_errors_are_per_row() {
        let c = quick(Algorithm::DishufLaplace);
        let rows = sweep(&c, SweepParam::H, &[0.5, 2.0]).unwrap();
        assert!(rows[0].error.as_deref().unwrap().contains("h must exceed 1"));
        assert!(rows[1].summary.is_some());
        assert!(sweep(&c, SweepParam::G, &[1.0]).is_err());
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn epsilon_sweep_has_three_rows_per_value() {
        let mut c = quick(Algorithm::DishufLaplace);
        c.run.trials = 5;
        let rows = sweep(&c, SweepParam::Epsilon, &[0.1, 1.0, 10.0]).unwrap();
        assert_eq!(rows.len(), 9);
        assert!(rows.iter().all(|r| r.summary.is_some()));
    }
}
