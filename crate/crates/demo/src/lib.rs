//! WebAssembly bindings for the static demo page. Every export returns a JSON
//! string; the `*_data` functions hold the logic and are usable natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fdp_cox::breslow::{clamp_probability, estimate_at_risk_probability, query_hazard, run_fdp_breslow, HazardParams};
use fdp_cox::cox::{run_cdp_cox, run_fdp_cox, SgdParams};
use fdp_cox::datagen::{generate_dataset, true_cumulative_hazard, CoxModelSpec};
use fdp_cox::federation::{RunSeed, Server, WeightMode};
use fdp_cox::privacy::audit::{empirical_sensitivity, witness};
use fdp_cox::privacy::SensitivityCase;
use fdp_cox::rng::{Purpose, StreamFactory};
use fdp_cox::{ModelBounds, PrivacyBudget, Result};

#[derive(Debug, Serialize)]
pub struct HazardCurve {
    pub depth: usize,
    pub beta_hat: Vec<f64>,
    pub p_hat: f64,
    pub t: Vec<f64>,
    pub estimate: Vec<f64>,
    pub truth: Vec<f64>,
}

#[derive(Debug, Serialize)]
pub struct ErrorPoint {
    pub epsilon: f64,
    pub mean_sq_error: f64,
}

#[derive(Debug, Serialize)]
pub struct AuditRow {
    pub case: &'static str,
    pub bound: f64,
    pub max_observed: f64,
    pub witness: f64,
}

fn servers(spec: &CoxModelSpec, count: usize, n: usize, epsilon: f64, seed: u64, purpose: Purpose) -> Result<Vec<Server>> {
    let factory = StreamFactory::new(seed);
    (0..count)
        .map(|s| {
            let data = generate_dataset(spec, n, &mut factory.stream(0, s as u64, purpose))?;
            Ok(Server::new(s, data, PrivacyBudget::new(epsilon, 1e-3)?))
        })
        .collect()
}

/// Full federated pipeline on the reference model: batched coefficient fit,
/// at-risk probability on 10% extra records, then the private hazard tree.
pub fn hazard_curve_data(n: usize, epsilon: f64, server_count: usize, seed: u64) -> Result<HazardCurve> {
    let spec = CoxModelSpec::reference(0.3);
    let run_seed = RunSeed::new(seed, 0);
    let beta_servers = servers(&spec, server_count, n, epsilon, seed, Purpose::BetaData)?;
    let params = SgdParams::tuned(server_count * n, spec.dimension());
    let beta_hat = run_fdp_cox(&beta_servers, &params, run_seed)?.beta_hat;
    let p_servers = servers(&spec, server_count, (n / 10).max(1), epsilon, seed, Purpose::AtRiskData)?;
    let p_raw = estimate_at_risk_probability(&p_servers, 1.0, run_seed)?.p_hat;
    let p_hat = clamp_probability(p_raw, server_count * (n / 10).max(1));
    let tree_servers = servers(&spec, server_count, n, epsilon, seed, Purpose::HazardData)?;
    let fit = run_fdp_breslow(&tree_servers, &HazardParams::new(beta_hat.clone(), p_hat, 1.0), WeightMode::Hazard, run_seed)?;
    let t = fit.estimate.grid();
    Ok(HazardCurve {
        depth: fit.estimate.depth(),
        estimate: t.iter().map(|&x| query_hazard(&fit.estimate, x)).collect(),
        truth: t.iter().map(|&x| true_cumulative_hazard(&spec, x)).collect(),
        beta_hat,
        p_hat,
        t,
    })
}

/// Mean `‖β̂ − β₀‖²` of the central estimator over `reps` datasets per budget.
pub fn cdp_error_data(n: usize, epsilons: &[f64], reps: usize, seed: u64) -> Result<Vec<ErrorPoint>> {
    let spec = CoxModelSpec::reference(0.3);
    let factory = StreamFactory::new(seed);
    let params = SgdParams::tuned(n, spec.dimension());
    let datasets = (0..reps)
        .map(|r| generate_dataset(&spec, n, &mut factory.stream(r as u64, 0, Purpose::BetaData)))
        .collect::<Result<Vec<_>>>()?;
    epsilons
        .iter()
        .map(|&epsilon| {
            let budget = PrivacyBudget::new(epsilon, 1e-3)?;
            let mut total = 0.0;
            for (r, data) in datasets.iter().enumerate() {
                let fit = run_cdp_cox(data.clone(), budget, &params, RunSeed::new(seed, r as u64))?;
                total += fit.beta_hat.iter().zip(&spec.beta0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            Ok(ErrorPoint {
                epsilon,
                mean_sq_error: total / reps as f64,
            })
        })
        .collect()
}

/// Analytic score sensitivity bound, random-search maximum and the
/// constructed worst-case pair, per neighbour relation.
pub fn sensitivity_data(n: usize, trials: usize, seed: u64) -> Result<Vec<AuditRow>> {
    let bounds = ModelBounds::default();
    SensitivityCase::ALL
        .into_iter()
        .map(|case| {
            let a = empirical_sensitivity(n, 3, case, trials, &bounds, seed)?;
            Ok(AuditRow {
                case: case.name(),
                bound: a.bound,
                max_observed: a.max_observed,
                witness: witness(n, 3, case, &bounds)?,
            })
        })
        .collect()
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn hazard_curve(n: usize, epsilon: f64, servers: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(hazard_curve_data(n, epsilon, servers, seed.into()))
}

#[wasm_bindgen]
pub fn cdp_error(n: usize, epsilons: Vec<f64>, reps: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(cdp_error_data(n, &epsilons, reps, seed.into()))
}

#[wasm_bindgen]
pub fn sensitivity(n: usize, trials: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(sensitivity_data(n, trials, seed.into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazard_curve_tracks_truth() {
        let c = hazard_curve_data(3000, 4.0, 3, 1).unwrap();
        assert_eq!(c.t.len(), (1 << c.depth) + 1);
        assert_eq!(c.estimate[0], 0.0);
        let worst = c.estimate.iter().zip(&c.truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.3, "{worst}");
    }

    #[test]
    fn cdp_error_falls_with_budget() {
        let pts = cdp_error_data(1500, &[0.5, 8.0], 4, 2).unwrap();
        assert!(pts[1].mean_sq_error < pts[0].mean_sq_error);
    }

    #[test]
    fn audit_rows_respect_bound() {
        let rows = sensitivity_data(20, 100, 3).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.max_observed <= r.bound && r.witness <= r.bound));
    }
}
