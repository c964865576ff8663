use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fdp_cox::breslow::{clamp_probability, estimate_at_risk_probability, run_fdp_breslow, HazardParams};
use fdp_cox::cox::{run_fdp_cox, run_fdp_cox_interactive, CoxFitResult, SgdParams};
use fdp_cox::datagen::{generate_dataset, Baseline, CoxModelSpec, CovariateLaw};
use fdp_cox::experiments::{emit_csv_file, preset, run_scenario, Scenario, PRESETS};
use fdp_cox::federation::{RunSeed, Server, Transcript, WeightMode};
use fdp_cox::io::{read_dataset_file, read_json_file, write_dataset_file, write_json_file};
use fdp_cox::privacy::{empirical_sensitivity, SensitivityCase};
use fdp_cox::rng::{Purpose, StreamFactory};
use fdp_cox::{Dataset, ModelBounds, PrivacyBudget};

#[derive(Parser)]
#[command(name = "fdpcox", version, about = "Private federated Cox regression and cumulative hazard estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a dataset from a Cox model and write it as CSV
    Simulate(SimulateArgs),
    /// Estimate coefficients from one CSV file per server
    FitBeta(FitBetaArgs),
    /// Estimate the cumulative baseline hazard from one CSV file per server
    FitHazard(FitHazardArgs),
    /// Compare the analytic score sensitivity bound with random search
    AuditSensitivity(AuditArgs),
    /// Run a Monte-Carlo scenario and write one CSV row per metric
    Experiment(ExperimentArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(short, long)]
    n: usize,
    /// Comma-separated true coefficients
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.8")]
    beta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    baseline_rate: f64,
    #[arg(long, default_value_t = 0.3)]
    censoring_rate: f64,
    #[arg(long, value_enum, default_value_t = Covariates::Uniform)]
    covariates: Covariates,
    /// JSON model file; overrides the model flags
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Server index, so several files from one seed are independent
    #[arg(long, default_value_t = 0)]
    server: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Covariates {
    Uniform,
    TruncatedGaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum BetaAlgorithm {
    /// Full data, one server
    Cdp,
    /// Disjoint batches per round
    Fdp,
    /// Full data on every server each round
    Interactive,
}

#[derive(clap::Args)]
struct Privacy {
    /// One value for all servers or one per data file
    #[arg(long, value_delimiter = ',', default_value = "1")]
    epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    delta: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    c_z: f64,
    #[arg(long, default_value_t = 1.0)]
    c_beta: f64,
    /// Scales every noise standard deviation; 0 turns noise off
    #[arg(long, default_value_t = 1.0)]
    noise_multiplier: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct FitBetaArgs {
    /// Dataset CSV files, one per server
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = BetaAlgorithm::Fdp)]
    algorithm: BetaAlgorithm,
    #[command(flatten)]
    privacy: Privacy,
    /// Number of rounds; defaults to ⌈k_constant · log(N/d²)⌉
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, default_value_t = 6.0)]
    k_constant: f64,
    #[arg(long, default_value_t = 0.5)]
    step_size: f64,
    /// Fit result as JSON; printed to stdout when absent
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Released messages as JSON lines
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum HazardWeights {
    /// min(n, n²ε²)
    Hazard,
    /// min(n, n²ε²/d)
    Literal,
}

#[derive(clap::Args)]
struct FitHazardArgs {
    /// Dataset CSV files for the tree, one per server
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Coefficient plug-in, comma-separated
    #[arg(long, value_delimiter = ',', conflicts_with = "beta_fit")]
    beta: Option<Vec<f64>>,
    /// Fit result JSON from `fit-beta`
    #[arg(long)]
    beta_fit: Option<PathBuf>,
    /// Independent dataset CSV files for the at-risk probability
    #[arg(long, num_args = 1.., conflicts_with = "p_hat")]
    p_data: Vec<PathBuf>,
    /// At-risk probability plug-in
    #[arg(long)]
    p_hat: Option<f64>,
    #[arg(long, value_enum, default_value_t = HazardWeights::Hazard)]
    weights: HazardWeights,
    #[command(flatten)]
    privacy: Privacy,
    /// Grid CSV with t, cumulative_hazard, survival; printed to stdout when absent
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    transcript: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaseArg {
    All,
    CensoringOnly,
    CovariateOnly,
    TimeOnly,
    FullTriple,
}

#[derive(clap::Args)]
struct AuditArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,10,50,200")]
    n: Vec<usize>,
    #[arg(short, long, default_value_t = 3)]
    d: usize,
    #[arg(long, value_enum, default_value_t = CaseArg::All)]
    case: CaseArg,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 1.0)]
    c_z: f64,
    #[arg(long, default_value_t = 1.0)]
    c_beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output; printed to stdout when absent
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Named preset
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario JSON file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Multiplies sample sizes and sets the replication count (presets only)
    #[arg(long, default_value_t = 0.1)]
    scale: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Adds a runtime_ms column (output is then not reproducible)
    #[arg(long)]
    runtime: bool,
    #[arg(short, long)]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::FitBeta(a) => fit_beta(a),
        Command::FitHazard(a) => fit_hazard(a),
        Command::AuditSensitivity(a) => audit(a),
        Command::Experiment(a) => experiment(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = match &a.model {
        Some(path) => read_json_file::<CoxModelSpec>(path).with_context(|| format!("reading {}", path.display()))?,
        None => CoxModelSpec::new(
            a.beta.clone(),
            Baseline::constant(a.baseline_rate)?,
            a.censoring_rate,
            match a.covariates {
                Covariates::Uniform => CovariateLaw::Uniform,
                Covariates::TruncatedGaussian => CovariateLaw::TruncatedGaussian,
            },
        )?,
    };
    let mut rng = StreamFactory::new(a.seed).stream(0, a.server, Purpose::BetaData);
    let data = generate_dataset(&spec, a.n, &mut rng)?;
    write_dataset_file(&data, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn load(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths
        .iter()
        .map(|p| read_dataset_file(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn per_server(values: &[f64], count: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; count]),
        k if k == count => Ok(values.to_vec()),
        k => bail!("{k} {what} values given for {count} servers"),
    }
}

fn servers(data: Vec<Dataset>, p: &Privacy) -> Result<Vec<Server>> {
    let eps = per_server(&p.epsilon, data.len(), "epsilon")?;
    let del = per_server(&p.delta, data.len(), "delta")?;
    data.into_iter()
        .enumerate()
        .map(|(s, d)| Ok(Server::new(s, d, PrivacyBudget::new(eps[s], del[s])?)))
        .collect()
}

fn bounds(p: &Privacy, data: &[Dataset]) -> Result<ModelBounds> {
    let b = ModelBounds::new(p.c_z, p.c_beta)?;
    for d in data {
        d.check_bounds(&b)?;
    }
    Ok(b)
}

fn write_transcript(t: &Transcript, path: &Option<PathBuf>) -> Result<()> {
    if let Some(path) = path {
        let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        t.write_jsonl(&mut out)?;
        out.flush()?;
    }
    Ok(())
}

fn fit_beta(a: FitBetaArgs) -> Result<()> {
    let data = load(&a.data)?;
    let bounds = bounds(&a.privacy, &data)?;
    if matches!(a.algorithm, BetaAlgorithm::Cdp) && data.len() != 1 {
        bail!("the central estimator takes exactly one data file");
    }
    let total: usize = data.iter().map(Dataset::len).sum();
    let d = data[0].dimension();
    let rounds = a
        .rounds
        .unwrap_or_else(|| fdp_cox::cox::default_rounds(total, d, a.k_constant));
    let params = SgdParams {
        rounds,
        step_size: a.step_size,
        bounds,
        noise_multiplier: a.privacy.noise_multiplier,
    };
    let servers = servers(data, &a.privacy)?;
    let seed = RunSeed::new(a.privacy.seed, 0);
    let fit: CoxFitResult = match a.algorithm {
        BetaAlgorithm::Fdp => run_fdp_cox(&servers, &params, seed)?,
        BetaAlgorithm::Cdp | BetaAlgorithm::Interactive => run_fdp_cox_interactive(&servers, &params, seed)?,
    };
    write_transcript(&fit.transcript, &a.transcript)?;
    match &a.out {
        Some(path) => write_json_file(&fit, path)?,
        None => println!("{}", serde_json::to_string_pretty(&fit)?),
    }
    Ok(())
}

fn fit_hazard(a: FitHazardArgs) -> Result<()> {
    let data = load(&a.data)?;
    let bounds = bounds(&a.privacy, &data)?;
    let beta = match (&a.beta, &a.beta_fit) {
        (Some(b), None) => b.clone(),
        (None, Some(path)) => read_json_file::<CoxFitResult>(path)
            .with_context(|| format!("reading {}", path.display()))?
            .beta_hat,
        _ => bail!("give exactly one of --beta and --beta-fit"),
    };
    let seed = RunSeed::new(a.privacy.seed, 0);
    let p_hat = match (a.p_hat, a.p_data.is_empty()) {
        (Some(p), true) => p,
        (None, false) => {
            let p_data = load(&a.p_data)?;
            let total: usize = p_data.iter().map(Dataset::len).sum();
            let p_servers = servers(p_data, &a.privacy)?;
            let est = estimate_at_risk_probability(&p_servers, a.privacy.noise_multiplier, seed)?;
            eprintln!("p_hat = {}", est.p_hat);
            clamp_probability(est.p_hat, total)
        }
        _ => bail!("give exactly one of --p-hat and --p-data"),
    };
    let params = HazardParams::new(beta, p_hat, bounds.c_z).with_noise_multiplier(a.privacy.noise_multiplier);
    let mode = match a.weights {
        HazardWeights::Hazard => WeightMode::Hazard,
        HazardWeights::Literal => WeightMode::HazardLiteral,
    };
    let fit = run_fdp_breslow(&servers(data, &a.privacy)?, &params, mode, seed)?;
    write_transcript(&fit.transcript, &a.transcript)?;
    match &a.out {
        Some(path) => {
            let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            fit.estimate.write_csv(&mut out)?;
            out.flush()?;
        }
        None => fit.estimate.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn audit(a: AuditArgs) -> Result<()> {
    let bounds = ModelBounds::new(a.c_z, a.c_beta)?;
    let cases: Vec<SensitivityCase> = match a.case {
        CaseArg::All => SensitivityCase::ALL.to_vec(),
        CaseArg::CensoringOnly => vec![SensitivityCase::CensoringOnly],
        CaseArg::CovariateOnly => vec![SensitivityCase::CovariateOnly],
        CaseArg::TimeOnly => vec![SensitivityCase::TimeOnly],
        CaseArg::FullTriple => vec![SensitivityCase::FullTriple],
    };
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    };
    writeln!(out, "case,n,bound,max_observed,lower_witness")?;
    for case in cases {
        for &n in &a.n {
            let r = empirical_sensitivity(n, a.d, case, a.trials, &bounds, a.seed)?;
            writeln!(out, "{},{},{},{},{}", case.name(), n, r.bound, r.max_observed, r.lower_witness)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let mut scenario: Scenario = match (&a.preset, &a.config) {
        (Some(name), None) => preset(name)
            .with_context(|| format!("available presets: {}", PRESETS.join(", ")))?
            .scaled(a.scale)?,
        (None, Some(path)) => read_json_file(path).with_context(|| format!("reading {}", path.display()))?,
        _ => bail!("give exactly one of --preset and --config"),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    if let Some(r) = a.replications {
        scenario.replications = r;
    }
    scenario.record_runtime |= a.runtime;
    let output = run_scenario(&scenario)?;
    for f in &output.failures {
        eprintln!(
            "skipped n={} epsilon={} servers={} dimension={} replication {}: {}",
            f.point.n, f.point.epsilon, f.point.servers, f.point.dimension, f.replication, f.error
        );
    }
    emit_csv_file(&output.rows, Path::new(&a.out)).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("{} rows written to {}", output.rows.len(), a.out.display());
    Ok(())
}
