//! Monte-Carlo experiment runner: error metrics, scenario grids, presets and
//! CSV output.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::breslow::{
    clamp_probability, estimate_at_risk_probability, query_hazard, run_fdp_breslow, survival_estimate, HazardEstimate,
    HazardParams,
};
use crate::cox::{default_rounds, run_fdp_cox, run_fdp_cox_interactive, SgdParams};
use crate::datagen::{at_risk_probability, generate_dataset, random_coefficients, CoxModelSpec, CovariateLaw};
use crate::error::{Error, Result};
use crate::federation::{RunSeed, Server, WeightMode};
use crate::privacy::PrivacyBudget;
use crate::rng::{Purpose, StreamFactory};
use crate::survival::{Dataset, ModelBounds};

/// `‖β̂ - β₀‖₂²`.
pub fn beta_sq_error(beta_hat: &[f64], beta0: &[f64]) -> Result<f64> {
    if beta_hat.len() != beta0.len() {
        return Err(Error::DimensionMismatch {
            expected: beta0.len(),
            actual: beta_hat.len(),
        });
    }
    Ok(beta_hat.iter().zip(beta0).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Sup-norm hazard error on the dyadic grid, plus the Lipschitz slack
/// bounding how far the sup over `[0, 1]` can exceed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HazardSupError {
    pub grid_max: f64,
    pub slack: f64,
}

impl HazardSupError {
    pub fn upper(&self) -> f64 {
        self.grid_max + self.slack
    }
}

pub fn hazard_sup_error(estimate: &HazardEstimate, spec: &CoxModelSpec) -> HazardSupError {
    let grid_max = estimate
        .grid()
        .into_iter()
        .map(|t| (query_hazard(estimate, t) - spec.baseline.cumulative(t)).abs())
        .fold(0.0, f64::max);
    HazardSupError {
        grid_max,
        slack: spec.baseline.max_rate() / (1usize << estimate.depth()) as f64,
    }
}

/// `max_t |Ŝ(t) - exp(-Λ₀(t))|` on the dyadic grid.
pub fn survival_sup_error(estimate: &HazardEstimate, spec: &CoxModelSpec) -> f64 {
    estimate
        .grid()
        .into_iter()
        .map(|t| (survival_estimate(estimate, t) - (-spec.baseline.cumulative(t)).exp()).abs())
        .fold(0.0, f64::max)
}

pub fn p_hat_error(p_hat: f64, p0: f64) -> f64 {
    (p_hat - p0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    BetaSqError,
    HazardSupError,
    SurvivalSupError,
    PHatError,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::BetaSqError => "beta_sq_error",
            Metric::HazardSupError => "hazard_sup_error",
            Metric::SurvivalSupError => "survival_sup_error",
            Metric::PHatError => "p_hat_error",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Metric::BetaSqError, Metric::HazardSupError, Metric::SurvivalSupError, Metric::PHatError]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown metric {s:?}")))
    }
}

/// Coefficient estimator used in a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Full data, one server.
    CdpCox,
    /// Disjoint batches per round.
    FdpCox,
    /// Full data on every server each round.
    FdpCoxInteractive,
}

/// Which errors a scenario reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimand {
    Beta,
    Hazard,
    Both,
}

impl Estimand {
    fn beta(self) -> bool {
        matches!(self, Estimand::Beta | Estimand::Both)
    }

    fn hazard(self) -> bool {
        matches!(self, Estimand::Hazard | Estimand::Both)
    }
}

/// Where the hazard pipeline takes a plug-in value from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlugIn {
    /// Private estimate from an independent dataset.
    Estimated,
    /// The data-generating value.
    Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tuning {
    pub step_size: f64,
    /// `K = ⌈k_constant · log(Σ n_s / d²)⌉`.
    pub k_constant: f64,
    pub noise_multiplier: f64,
    pub bounds: ModelBounds,
    /// Size of each server's probability dataset relative to `n`.
    pub p_fraction: f64,
    /// Size of each server's hazard dataset relative to `n`.
    pub hazard_fraction: f64,
    pub hazard_weights: WeightMode,
    pub beta_source: PlugIn,
    pub p_source: PlugIn,
    /// Covariate draws for the true at-risk probability.
    pub p0_samples: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            k_constant: 6.0,
            noise_multiplier: 1.0,
            bounds: ModelBounds::default(),
            p_fraction: 0.1,
            hazard_fraction: 1.0,
            hazard_weights: WeightMode::Hazard,
            beta_source: PlugIn::Estimated,
            p_source: PlugIn::Estimated,
            p0_samples: 20_000,
        }
    }
}

/// Parameter lists; the runner takes their Cartesian product. Empty
/// `dimension`, `censoring_rate` and `step_size` lists fall back to the
/// model and tuning values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Grid {
    pub n: Vec<usize>,
    pub epsilon: Vec<f64>,
    pub delta: Vec<f64>,
    pub servers: Vec<usize>,
    pub dimension: Vec<usize>,
    pub censoring_rate: Vec<f64>,
    /// Sensitivity values `C` at the reference size [`SENSITIVITY_REFERENCE_N`];
    /// at per-round size `m` the sensitivity used is
    /// `C · (log(m)/m) / (log(N_ref)/N_ref)`.
    pub noise_constant: Vec<f64>,
    pub step_size: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            n: vec![1000],
            epsilon: vec![1.0],
            delta: vec![1e-3],
            servers: vec![1],
            dimension: vec![],
            censoring_rate: vec![],
            noise_constant: vec![],
            step_size: vec![],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub servers: usize,
    pub dimension: usize,
    pub censoring_rate: f64,
    pub noise_constant: Option<f64>,
    pub step_size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub model: CoxModelSpec,
    /// Draw `β₀ ~ N(0, I)` projected to the unit ball per replication.
    #[serde(default)]
    pub random_beta: bool,
    pub grid: Grid,
    pub algorithm: Algorithm,
    pub estimand: Estimand,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub tuning: Tuning,
    /// Adds a wall-clock `runtime_ms` column; output is then no longer
    /// reproducible byte for byte.
    #[serde(default)]
    pub record_runtime: bool,
}

const EPSILONS: [f64; 7] = [0.75, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
const SAMPLE_SIZES: [usize; 7] = [20_000, 25_000, 30_000, 35_000, 40_000, 45_000, 50_000];

pub const PRESETS: [&str; 8] = [
    "cdp-beta-grid",
    "cdp-hazard-grid",
    "dimension-study",
    "sensitivity-noise",
    "sensitivity-step",
    "censoring-study",
    "fdp-grid",
    "fdp-interactive",
];

/// Replications at a given scale: `min(200, max(2, round(500 · scale)))`.
pub fn replications_for_scale(scale: f64) -> usize {
    ((500.0 * scale).round() as usize).clamp(2, 200)
}

/// A named preset at full size with 200 replications; see [`Scenario::scaled`].
pub fn preset(name: &str) -> Result<Scenario> {
    let base = |name: &str, grid: Grid, algorithm: Algorithm, estimand: Estimand| Scenario {
        name: name.to_string(),
        model: CoxModelSpec::reference(0.3),
        random_beta: false,
        grid,
        algorithm,
        estimand,
        replications: 200,
        seed: 2024,
        tuning: Tuning::default(),
        record_runtime: false,
    };
    let grid = |n: Vec<usize>| Grid {
        n,
        epsilon: EPSILONS.to_vec(),
        ..Grid::default()
    };
    let at_30k = || grid(vec![30_000]);
    Ok(match name {
        "cdp-beta-grid" => base(name, grid(SAMPLE_SIZES.to_vec()), Algorithm::CdpCox, Estimand::Beta),
        "cdp-hazard-grid" => base(name, grid(SAMPLE_SIZES.to_vec()), Algorithm::CdpCox, Estimand::Hazard),
        "dimension-study" => {
            let mut s = base(
                name,
                Grid {
                    dimension: (2..=8).collect(),
                    ..at_30k()
                },
                Algorithm::CdpCox,
                Estimand::Beta,
            );
            s.random_beta = true;
            s
        }
        "sensitivity-noise" => base(
            name,
            Grid {
                noise_constant: (0..7).map(|i| 0.005 + 0.0025 * i as f64).collect(),
                ..at_30k()
            },
            Algorithm::CdpCox,
            Estimand::Beta,
        ),
        "sensitivity-step" => base(
            name,
            Grid {
                step_size: (2..=8).map(|i| i as f64 / 10.0).collect(),
                ..at_30k()
            },
            Algorithm::CdpCox,
            Estimand::Beta,
        ),
        "censoring-study" => base(
            name,
            Grid {
                censoring_rate: (0..7).map(|i| 0.1 + 0.2 * i as f64).collect(),
                ..at_30k()
            },
            Algorithm::CdpCox,
            Estimand::Both,
        ),
        "fdp-grid" => base(
            name,
            Grid {
                servers: vec![2, 4, 8, 12, 16, 20],
                ..grid(vec![25_000])
            },
            Algorithm::FdpCox,
            Estimand::Both,
        ),
        "fdp-interactive" => base(
            name,
            Grid {
                servers: (2..=8).collect(),
                ..grid(vec![10_000])
            },
            Algorithm::FdpCoxInteractive,
            Estimand::Both,
        ),
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}

impl Scenario {
    /// Multiplies every `n` by `scale` and sets the replication count from
    /// [`replications_for_scale`].
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be positive, got {scale}")));
        }
        for n in self.grid.n.iter_mut() {
            *n = ((*n as f64 * scale).round() as usize).max(2);
        }
        self.replications = replications_for_scale(scale);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter("replications must be at least 1".into()));
        }
        let g = &self.grid;
        if g.n.is_empty() || g.epsilon.is_empty() || g.delta.is_empty() || g.servers.is_empty() {
            return Err(Error::InvalidParameter("grid lists n, epsilon, delta and servers must be nonempty".into()));
        }
        self.model.validate()
    }

    /// Grid points in output order; `n` varies fastest.
    pub fn points(&self) -> Vec<GridPoint> {
        let g = &self.grid;
        let or = |v: &Vec<f64>, x: f64| if v.is_empty() { vec![x] } else { v.clone() };
        let dims = if g.dimension.is_empty() {
            vec![self.model.dimension()]
        } else {
            g.dimension.clone()
        };
        let noise: Vec<Option<f64>> = if g.noise_constant.is_empty() {
            vec![None]
        } else {
            g.noise_constant.iter().copied().map(Some).collect()
        };
        let mut out = Vec::new();
        for &servers in &g.servers {
            for &dimension in &dims {
                for censoring_rate in or(&g.censoring_rate, self.model.censoring_rate) {
                    for &noise_constant in &noise {
                        for step_size in or(&g.step_size, self.tuning.step_size) {
                            for &delta in &g.delta {
                                for &epsilon in &g.epsilon {
                                    for &n in &g.n {
                                        out.push(GridPoint {
                                            n,
                                            epsilon,
                                            delta,
                                            servers,
                                            dimension,
                                            censoring_rate,
                                            noise_constant,
                                            step_size,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub point: GridPoint,
    pub replication: usize,
    pub metric: Metric,
    pub value: f64,
    pub runtime_ms: Option<f64>,
}

/// A grid point and replication that could not be run.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub point: GridPoint,
    pub replication: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOutput {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<Failure>,
}

fn model_at(scenario: &Scenario, point: &GridPoint, streams: &StreamFactory, replication: usize) -> Result<CoxModelSpec> {
    let mut spec = scenario.model.clone();
    spec.censoring_rate = point.censoring_rate;
    if scenario.random_beta {
        let mut rng = streams.stream(replication as u64, point.dimension as u64, Purpose::TrueCoefficients);
        spec.beta0 = random_coefficients(point.dimension, &mut rng);
        spec.covariate_law = CovariateLaw::Uniform;
    } else if point.dimension != spec.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension(),
            actual: point.dimension,
        });
    }
    spec.validate_bounds(&scenario.tuning.bounds)?;
    Ok(spec)
}

fn servers_for(
    spec: &CoxModelSpec,
    count: usize,
    n: usize,
    budget: PrivacyBudget,
    streams: &StreamFactory,
    replication: usize,
    purpose: Purpose,
) -> Result<Vec<Server>> {
    (0..count)
        .map(|s| {
            let mut rng = streams.stream(replication as u64, s as u64, purpose);
            Ok(Server::new(s, generate_dataset(spec, n, &mut rng)?, budget))
        })
        .collect()
}

/// Sample size at which a sensitivity-analysis constant is the sensitivity itself.
pub const SENSITIVITY_REFERENCE_N: f64 = 30_000.0;

/// Sensitivity implied by a noise constant at per-round size `m`.
pub fn constant_sensitivity(c: f64, m: usize) -> f64 {
    let mf = m.max(2) as f64;
    c * (mf.ln() / mf) / (SENSITIVITY_REFERENCE_N.ln() / SENSITIVITY_REFERENCE_N)
}

/// Noise multiplier that swaps the algorithm's own sensitivity for
/// [`constant_sensitivity`].
fn noise_multiplier(tuning: &Tuning, point: &GridPoint, m: usize) -> f64 {
    match point.noise_constant {
        None => tuning.noise_multiplier,
        Some(c) => {
            let mf = m.max(2) as f64;
            let own = 6.0 * tuning.bounds.noise_factor() * (mf + 1.0).ln() / mf;
            tuning.noise_multiplier * constant_sensitivity(c, m) / own
        }
    }
}

/// One replication at one grid point.
pub fn run_replication(scenario: &Scenario, point: &GridPoint, replication: usize) -> Result<Vec<(Metric, f64)>> {
    let tuning = &scenario.tuning;
    let streams = StreamFactory::new(scenario.seed);
    let seed = RunSeed {
        streams,
        replication: replication as u64,
    };
    let spec = model_at(scenario, point, &streams, replication)?;
    if scenario.algorithm == Algorithm::CdpCox && point.servers != 1 {
        return Err(Error::InvalidParameter(format!(
            "the central estimator runs on one server, grid point has {}",
            point.servers
        )));
    }
    let budget = PrivacyBudget::new(point.epsilon, point.delta)?;
    let d = spec.dimension();
    let mut metrics = Vec::new();

    let need_fit = scenario.estimand.beta() || tuning.beta_source == PlugIn::Estimated;
    let beta_hat = if need_fit {
        let servers = servers_for(&spec, point.servers, point.n, budget, &streams, replication, Purpose::BetaData)?;
        let rounds = default_rounds(point.n * point.servers, d, tuning.k_constant);
        let per_round = match scenario.algorithm {
            Algorithm::FdpCox => point.n / rounds,
            _ => point.n,
        };
        let params = SgdParams {
            rounds,
            step_size: point.step_size,
            bounds: tuning.bounds,
            noise_multiplier: noise_multiplier(tuning, point, per_round),
        };
        let fit = match scenario.algorithm {
            Algorithm::FdpCox => run_fdp_cox(&servers, &params, seed)?,
            Algorithm::CdpCox | Algorithm::FdpCoxInteractive => run_fdp_cox_interactive(&servers, &params, seed)?,
        };
        if scenario.estimand.beta() {
            metrics.push((Metric::BetaSqError, beta_sq_error(&fit.beta_hat, &spec.beta0)?));
        }
        fit.beta_hat
    } else {
        spec.beta0.clone()
    };

    if scenario.estimand.hazard() {
        let beta_plug = match tuning.beta_source {
            PlugIn::Estimated => beta_hat,
            PlugIn::Truth => spec.beta0.clone(),
        };
        let p0 = {
            let mut rng = streams.stream(replication as u64, 0, Purpose::Custom(1));
            at_risk_probability(&spec, tuning.p0_samples, &mut rng)
        };
        let p_hat = match tuning.p_source {
            PlugIn::Truth => p0,
            PlugIn::Estimated => {
                let n_p = ((point.n as f64 * tuning.p_fraction).round() as usize).max(1);
                let servers = servers_for(&spec, point.servers, n_p, budget, &streams, replication, Purpose::AtRiskData)?;
                let est = estimate_at_risk_probability(&servers, tuning.noise_multiplier, seed)?;
                metrics.push((Metric::PHatError, p_hat_error(est.p_hat, p0)));
                clamp_probability(est.p_hat, n_p * point.servers)
            }
        };
        let n_h = ((point.n as f64 * tuning.hazard_fraction).round() as usize).max(1);
        let servers = servers_for(&spec, point.servers, n_h, budget, &streams, replication, Purpose::HazardData)?;
        let params = HazardParams::new(beta_plug, p_hat, tuning.bounds.c_z).with_noise_multiplier(tuning.noise_multiplier);
        let fit = run_fdp_breslow(&servers, &params, tuning.hazard_weights, seed)?;
        metrics.push((Metric::HazardSupError, hazard_sup_error(&fit.estimate, &spec).grid_max));
        metrics.push((Metric::SurvivalSupError, survival_sup_error(&fit.estimate, &spec)));
    }
    if let Some((m, _)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(m.name()));
    }
    Ok(metrics)
}

/// Runs every grid point and replication. Rows come grid-major,
/// replication-minor; failed cells are collected instead of aborting.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    scenario.validate()?;
    let jobs: Vec<(GridPoint, usize)> = scenario
        .points()
        .into_iter()
        .flat_map(|p| (0..scenario.replications).map(move |r| (p, r)))
        .collect();
    let results = crate::par_map(jobs, |(point, r)| {
        let start = Instant::now();
        let out = run_replication(scenario, &point, r);
        (point, r, out, start.elapsed().as_secs_f64() * 1e3)
    });
    let mut output = RunOutput::default();
    for (point, replication, out, ms) in results {
        match out {
            Ok(metrics) => output.rows.extend(metrics.into_iter().map(|(metric, value)| ResultRow {
                scenario: scenario.name.clone(),
                point,
                replication,
                metric,
                value,
                runtime_ms: scenario.record_runtime.then_some(ms),
            })),
            Err(error) => output.failures.push(Failure {
                point,
                replication,
                error,
            }),
        }
    }
    Ok(output)
}

const COLUMNS: [&str; 12] = [
    "scenario",
    "n",
    "epsilon",
    "delta",
    "servers",
    "dimension",
    "censoring_rate",
    "noise_constant",
    "step_size",
    "replication",
    "metric",
    "value",
];

/// Header plus one line per row; the `runtime_ms` column appears only when
/// some row carries a runtime.
pub fn emit_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let with_runtime = rows.iter().any(|r| r.runtime_ms.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = COLUMNS.to_vec();
    if with_runtime {
        header.push("runtime_ms");
    }
    w.write_record(&header)?;
    for r in rows {
        let p = &r.point;
        let mut rec = vec![
            r.scenario.clone(),
            p.n.to_string(),
            p.epsilon.to_string(),
            p.delta.to_string(),
            p.servers.to_string(),
            p.dimension.to_string(),
            p.censoring_rate.to_string(),
            p.noise_constant.map(|c| c.to_string()).unwrap_or_default(),
            p.step_size.to_string(),
            r.replication.to_string(),
            r.metric.name().to_string(),
            r.value.to_string(),
        ];
        if with_runtime {
            rec.push(r.runtime_ms.map(|x| x.to_string()).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv_file(rows: &[ResultRow], path: &std::path::Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    emit_csv(rows, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().take(COLUMNS.len()).ne(COLUMNS.iter().copied()) {
        return Err(Error::Parse("unexpected result header".into()));
    }
    let with_runtime = header.get(COLUMNS.len()) == Some("runtime_ms");
    fn num<T: FromStr>(s: &str, col: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        s.parse().map_err(|e| Error::Parse(format!("column {col}: {e}")))
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(ResultRow {
            scenario: rec[0].to_string(),
            point: GridPoint {
                n: num(&rec[1], "n")?,
                epsilon: num(&rec[2], "epsilon")?,
                delta: num(&rec[3], "delta")?,
                servers: num(&rec[4], "servers")?,
                dimension: num(&rec[5], "dimension")?,
                censoring_rate: num(&rec[6], "censoring_rate")?,
                noise_constant: if rec[7].is_empty() { None } else { Some(num(&rec[7], "noise_constant")?) },
                step_size: num(&rec[8], "step_size")?,
            },
            replication: num(&rec[9], "replication")?,
            metric: rec[10].parse()?,
            value: num(&rec[11], "value")?,
            runtime_ms: if with_runtime && !rec[12].is_empty() {
                Some(num(&rec[12], "runtime_ms")?)
            } else {
                None
            },
        });
    }
    Ok(rows)
}

/// Mean of `metric` over replications at each grid point, in grid order.
pub fn mean_by_point(rows: &[ResultRow], metric: Metric) -> Vec<(GridPoint, f64)> {
    let mut out: Vec<(GridPoint, f64, usize)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        match out.iter_mut().find(|(p, _, _)| *p == r.point) {
            Some(entry) => {
                entry.1 += r.value;
                entry.2 += 1;
            }
            None => out.push((r.point, r.value, 1)),
        }
    }
    out.into_iter().map(|(p, s, c)| (p, s / c as f64)).collect()
}

/// The dataset a scenario would use for `β̂` at one server; handy for
/// inspecting a grid point.
pub fn beta_dataset(scenario: &Scenario, point: &GridPoint, replication: usize, server: usize) -> Result<Dataset> {
    let streams = StreamFactory::new(scenario.seed);
    let spec = model_at(scenario, point, &streams, replication)?;
    let mut rng = streams.stream(replication as u64, server as u64, Purpose::BetaData);
    generate_dataset(&spec, point.n, &mut rng)
}
