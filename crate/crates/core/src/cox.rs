//! Private coefficient estimation by noisy projected gradient ascent.
//!
//! Three variants share one loop: batched federated (each round consumes a
//! fresh batch), fully interactive federated (full data every round, RDP
//! composition across rounds) and its single-server special case.
//! Every server derives the current iterate from the broadcast alone.

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    config_for, effective_weights, run_rounds, BatchMode, FederationConfig, Message, Payload, RunSeed, Server, Transcript,
    WeightMode,
};
use crate::privacy::{certify_gaussian_rounds, composed_gaussian_variance, composition_order, PrivacyBudget};
use crate::rng::Purpose;
use crate::survival::{gradient, project_ball, Dataset, ModelBounds};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdParams {
    pub rounds: usize,
    pub step_size: f64,
    pub bounds: ModelBounds,
    /// Scales every noise standard deviation; 0 disables noise.
    pub noise_multiplier: f64,
}

impl SgdParams {
    pub fn new(rounds: usize, step_size: f64, bounds: ModelBounds) -> Result<Self> {
        let p = Self {
            rounds,
            step_size,
            bounds,
            noise_multiplier: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    /// `η = 0.5`, `K = ⌈6 log(N/d²)⌉`.
    pub fn tuned(total_n: usize, d: usize) -> Self {
        Self {
            rounds: default_rounds(total_n, d, 6.0),
            step_size: 0.5,
            bounds: ModelBounds::default(),
            noise_multiplier: 1.0,
        }
    }

    pub fn with_noise_multiplier(mut self, m: f64) -> Self {
        self.noise_multiplier = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.noise_multiplier >= 0.0 && self.noise_multiplier.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "noise multiplier must be nonnegative, got {}",
                self.noise_multiplier
            )));
        }
        Ok(())
    }
}

/// `max(1, ⌈constant · log(total_n / d²)⌉)`.
pub fn default_rounds(total_n: usize, d: usize, constant: f64) -> usize {
    let d2 = (d.max(1) * d.max(1)) as f64;
    let k = (constant * (total_n as f64 / d2).ln()).ceil();
    if k.is_finite() && k >= 1.0 {
        k as usize
    } else {
        1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitResult {
    pub beta_hat: Vec<f64>,
    /// `β⁽⁰⁾, …, β⁽ᴷ⁾`.
    pub trajectory: Vec<Vec<f64>>,
    /// Per-server noise standard deviation, constant across rounds.
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    #[serde(skip)]
    pub transcript: Transcript,
}

/// Per-coordinate noise sd of the batched algorithm:
/// `sqrt(72 log(1.25/δ) max(C_Z², C_Z⁴) e^{4 C_Z C_β} log²(b+1) / (ε² b²))`.
pub fn batched_sigma(b: usize, budget: &PrivacyBudget, bounds: &ModelBounds) -> Result<f64> {
    budget.require_positive_delta()?;
    if b == 0 {
        return Err(Error::InvalidParameter("batch size must be at least 1".into()));
    }
    let b = b as f64;
    let var = 72.0 * (1.25 / budget.delta).ln() * bounds.noise_factor().powi(2) * (b + 1.0).ln().powi(2)
        / (budget.epsilon * budget.epsilon * b * b);
    Ok(var.sqrt())
}

/// `6 max(C_Z, C_Z²) e^{2 C_Z C_β} log(n+1)/n`, the sensitivity behind the
/// full-data calibration.
pub fn full_data_sensitivity(n: usize, bounds: &ModelBounds) -> f64 {
    let n = n.max(1) as f64;
    6.0 * bounds.noise_factor() * (n + 1.0).ln() / n
}

/// Per-coordinate noise sd of the full-data algorithms:
/// `sqrt(36 max(C_Z², C_Z⁴) e^{4 C_Z C_β} log²(n+1)/n² · (2 log(1/δ)/ε + 1) / (ε/K))`.
pub fn full_data_sigma(n: usize, budget: &PrivacyBudget, rounds: usize, bounds: &ModelBounds) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    Ok(composed_gaussian_variance(full_data_sensitivity(n, bounds), budget, rounds)?.sqrt())
}

/// Runs the accountant on `rounds` full-data releases at the calibrated sigma
/// and returns the certified `(ε', δ)`.
pub fn certify_full_data(n: usize, budget: &PrivacyBudget, rounds: usize, bounds: &ModelBounds) -> Result<PrivacyBudget> {
    let sigma = full_data_sigma(n, budget, rounds, bounds)?;
    certify_gaussian_rounds(
        full_data_sensitivity(n, bounds),
        sigma,
        rounds,
        composition_order(budget),
        budget.delta,
    )
}

/// Rebuilds `β⁽⁰⁾, …` from released messages: `β ← Π(β + η Σ_s v_s m_s)`
/// with messages of a round taken in server order.
pub fn replay(messages: &[Message], weights: &[f64], step_size: f64, c_beta: f64, d: usize) -> Result<Vec<Vec<f64>>> {
    let mut trajectory = vec![vec![0.0; d]];
    let rounds = messages.iter().map(|m| m.round).max().unwrap_or(0);
    for k in 1..=rounds {
        let mut step = vec![0.0; d];
        let mut seen = 0;
        for (m, v) in messages.iter().filter(|m| m.round == k).zip(weights) {
            let Payload::NoisedVector(g) = &m.payload else {
                return Err(Error::InvalidParameter(format!("round {k} carries a non-vector message")));
            };
            if g.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: g.len(),
                });
            }
            for (s, x) in step.iter_mut().zip(g) {
                *s += v * x;
            }
            seen += 1;
        }
        if seen != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "round {k} has {seen} messages for {} servers",
                weights.len()
            )));
        }
        let prev = trajectory.last().expect("trajectory starts nonempty");
        let next: Vec<f64> = prev.iter().zip(&step).map(|(b, s)| b + step_size * s).collect();
        trajectory.push(project_ball(&next, c_beta));
    }
    Ok(trajectory)
}

fn noised_gradient(batch: &Dataset, beta: &[f64], sigma: f64, rng: &mut ChaCha20Rng) -> Result<Vec<f64>> {
    let mut g = gradient(batch, beta)?;
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    for x in g.iter_mut() {
        let w: f64 = rng.sample(StandardNormal);
        *x += sigma * w;
    }
    Ok(g)
}

fn run_ascent(
    config: &FederationConfig,
    servers: &[Server],
    params: &SgdParams,
    seed: RunSeed,
    mode: BatchMode,
    weights: Vec<f64>,
    sigmas: Vec<f64>,
) -> Result<CoxFitResult> {
    params.validate()?;
    let d = config.dimension;
    let (eta, c_beta) = (params.step_size, params.bounds.c_beta);
    let position: std::collections::HashMap<usize, usize> = servers.iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let transcript = run_rounds(config, servers, mode, seed, Purpose::GradientNoise, |input, rng| {
        let beta = replay(input.broadcast, &weights, eta, c_beta, d)?
            .pop()
            .expect("trajectory starts nonempty");
        let sigma = sigmas[position[&input.server]];
        Ok((Payload::NoisedVector(noised_gradient(input.batch, &beta, sigma, rng)?), sigma))
    })?;
    let trajectory = replay(&transcript.messages, &weights, eta, c_beta, d)?;
    Ok(CoxFitResult {
        beta_hat: trajectory.last().expect("trajectory starts nonempty").clone(),
        trajectory,
        sigmas,
        weights,
        transcript,
    })
}

/// Batched federated estimator: round `k` uses the `k`-th of `K` disjoint
/// batches of size `⌊n_s/K⌋` on every server.
pub fn run_fdp_cox(servers: &[Server], params: &SgdParams, seed: RunSeed) -> Result<CoxFitResult> {
    params.validate()?;
    let config = config_for(servers, params.rounds)?;
    config.validate_batched()?;
    let weights = effective_weights(&config, WeightMode::BatchedBeta)?;
    let sigmas = servers
        .iter()
        .enumerate()
        .map(|(s, srv)| Ok(batched_sigma(config.batch_size(s), &srv.budget, &params.bounds)? * params.noise_multiplier))
        .collect::<Result<Vec<_>>>()?;
    run_ascent(&config, servers, params, seed, BatchMode::Batched, weights, sigmas)
}

/// Fully interactive federated estimator: full data on every server every
/// round, noise calibrated for `K`-fold composition.
pub fn run_fdp_cox_interactive(servers: &[Server], params: &SgdParams, seed: RunSeed) -> Result<CoxFitResult> {
    params.validate()?;
    let config = config_for(servers, params.rounds)?;
    let weights = effective_weights(&config, WeightMode::FullBeta)?;
    let sigmas = servers
        .iter()
        .map(|srv| Ok(full_data_sigma(srv.n(), &srv.budget, params.rounds, &params.bounds)? * params.noise_multiplier))
        .collect::<Result<Vec<_>>>()?;
    run_ascent(&config, servers, params, seed, BatchMode::FullData, weights, sigmas)
}

/// Central estimator on one dataset; the one-server case of
/// [`run_fdp_cox_interactive`].
pub fn run_cdp_cox(data: Dataset, budget: PrivacyBudget, params: &SgdParams, seed: RunSeed) -> Result<CoxFitResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    run_fdp_cox_interactive(&[Server::new(0, data, budget)], params, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, CoxModelSpec};
    use crate::rng::StreamFactory;
    use crate::survival::{norm, SurvivalRecord};

    fn budget(e: f64) -> PrivacyBudget {
        PrivacyBudget::new(e, 1e-3).unwrap()
    }

    fn data(n: usize, seed: u64) -> Dataset {
        let spec = CoxModelSpec::reference(0.3);
        generate_dataset(&spec, n, &mut StreamFactory::new(seed).stream(0, 0, Purpose::BetaData)).unwrap()
    }

    #[test]
    fn batched_sigma_matches_formula() {
        let s = batched_sigma(100, &budget(1.0), &ModelBounds::default()).unwrap();
        let expect = (72.0 * 1250f64.ln() * 4f64.exp() * 101f64.ln().powi(2)).sqrt() / 100.0;
        assert!((s - expect).abs() <= 1e-12 * expect);
    }

    #[test]
    fn full_data_sigma_matches_formula() {
        let (n, k, e, dl) = (500usize, 7usize, 2.0, 1e-4);
        let b = PrivacyBudget::new(e, dl).unwrap();
        let s = full_data_sigma(n, &b, k, &ModelBounds::default()).unwrap();
        let nf = n as f64;
        let var = 36.0 * 4f64.exp() * (nf + 1.0).ln().powi(2) / (nf * nf) * (2.0 * (1.0 / dl).ln() / e + 1.0) / (e / k as f64);
        assert!((s - var.sqrt()).abs() <= 1e-12 * s);
        let cert = certify_full_data(n, &b, k, &ModelBounds::default()).unwrap();
        assert!(cert.epsilon <= e + 1e-9);
    }

    #[test]
    fn default_rounds_examples() {
        assert_eq!(default_rounds(5000, 3, 6.0), (6.0 * (5000.0f64 / 9.0).ln()).ceil() as usize);
        assert_eq!(default_rounds(1, 3, 6.0), 1);
    }

    #[test]
    fn iterates_stay_in_ball() {
        let d = data(400, 1);
        let p = SgdParams::new(8, 5.0, ModelBounds::new(1.0, 0.3).unwrap()).unwrap();
        let fit = run_cdp_cox(d, budget(0.2), &p, 3.into()).unwrap();
        assert_eq!(fit.trajectory.len(), 9);
        assert_eq!(fit.trajectory[0], vec![0.0; 3]);
        for b in &fit.trajectory {
            assert!(norm(b) <= 0.3 + 1e-15);
        }
        assert_eq!(fit.transcript.len(), 8);
    }

    #[test]
    fn noise_only_single_round() {
        let recs = (0..20)
            .map(|i| SurvivalRecord::new(0.05 * (i + 1) as f64, false, vec![0.1, -0.2]).unwrap())
            .collect();
        let d = Dataset::from_records(recs).unwrap();
        let p = SgdParams::new(1, 0.5, ModelBounds::default()).unwrap();
        let fit = run_cdp_cox(d, budget(1.0), &p, 5.into()).unwrap();
        let Payload::NoisedVector(w) = &fit.transcript.messages[0].payload else {
            panic!()
        };
        let expect = project_ball(&w.iter().map(|x| 0.5 * x).collect::<Vec<_>>(), 1.0);
        assert_eq!(fit.beta_hat, expect);
        assert!(norm(&fit.beta_hat) <= 1.0 + 1e-15);
    }

    #[test]
    fn cdp_is_interactive_with_one_server() {
        let d = data(300, 2);
        let p = SgdParams::new(5, 0.5, ModelBounds::default()).unwrap();
        let a = run_cdp_cox(d.clone(), budget(1.0), &p, 8.into()).unwrap();
        let b = run_fdp_cox_interactive(&[Server::new(0, d, budget(1.0))], &p, 8.into()).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.sigmas, b.sigmas);
    }

    #[test]
    fn identical_servers_match_one_server_without_noise() {
        let d = data(300, 4);
        let p = SgdParams::new(3, 0.5, ModelBounds::default()).unwrap().with_noise_multiplier(0.0);
        let one = run_fdp_cox(&[Server::new(0, d.clone(), budget(1.0))], &p, 1.into()).unwrap();
        let two = run_fdp_cox(&[Server::new(0, d.clone(), budget(1.0)), Server::new(1, d, budget(1.0))], &p, 1.into()).unwrap();
        assert_eq!(two.weights, vec![0.5, 0.5]);
        for (a, b) in one.trajectory.iter().zip(&two.trajectory) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(two.transcript.messages.iter().all(|m| m.sigma == 0.0));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = SgdParams::new(50, 0.5, ModelBounds::default()).unwrap();
        let r = run_fdp_cox(&[Server::new(0, data(20, 1), budget(1.0))], &p, 1.into());
        assert!(matches!(r, Err(Error::EmptyBatch { .. })));
    }

    #[test]
    fn result_json_has_no_transcript() {
        let p = SgdParams::new(2, 0.5, ModelBounds::default()).unwrap();
        let fit = run_cdp_cox(data(50, 1), budget(1.0), &p, 1.into()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&fit).unwrap();
        assert!(v.get("transcript").is_none());
        assert_eq!(v["trajectory"].as_array().unwrap().len(), 3);
    }
}
