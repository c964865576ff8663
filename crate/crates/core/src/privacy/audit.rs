//! Empirical audit of the score's ℓ₂-sensitivity.
//!
//! Random search draws a dataset, a coefficient vector in the `C_β`-ball and a
//! neighbour that differs in one record under the case's neighbour relation,
//! and records the largest score difference seen. The witness is a fixed
//! adversarial pair per case.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{grad_sensitivity_bound, SensitivityCase};
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamFactory};
use crate::survival::{gradient, norm, Dataset, ModelBounds, SurvivalRecord};

/// One auditor run; also the CSV row layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditResult {
    pub case: SensitivityCase,
    pub n: usize,
    pub bound: f64,
    pub max_observed: f64,
    pub lower_witness: f64,
}

fn score_gap(a: &Dataset, b: &Dataset, beta: &[f64]) -> Result<f64> {
    let ga = gradient(a, beta)?;
    let gb = gradient(b, beta)?;
    Ok(norm(&ga.iter().zip(&gb).map(|(x, y)| x - y).collect::<Vec<_>>()))
}

fn random_in_ball<R: Rng>(d: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    // Half the draws sit on the sphere, where the extremes live.
    let dir: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let len = norm(&dir).max(1e-300);
    let r = if rng.gen_bool(0.5) {
        radius
    } else {
        radius * rng.gen::<f64>().powf(1.0 / d as f64)
    };
    dir.iter().map(|x| x * r / len).collect()
}

fn random_record<R: Rng>(d: usize, bounds: &ModelBounds, rng: &mut R) -> SurvivalRecord {
    SurvivalRecord {
        time: rng.gen::<f64>(),
        event: rng.gen_bool(0.7),
        covariates: random_in_ball(d, bounds.c_z, rng),
    }
}

fn neighbour<R: Rng>(record: &SurvivalRecord, case: SensitivityCase, bounds: &ModelBounds, rng: &mut R) -> SurvivalRecord {
    let d = record.covariates.len();
    let mut r = record.clone();
    match case {
        SensitivityCase::CensoringOnly => r.event = !r.event,
        SensitivityCase::CovariateOnly => r.covariates = random_in_ball(d, bounds.c_z, rng),
        SensitivityCase::TimeOnly => r.time = rng.gen::<f64>(),
        SensitivityCase::FullTriple => r = random_record(d, bounds, rng),
    }
    r
}

fn axis(d: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[0] = value;
    v
}

/// Event times `1/(n+1), …, n/(n+1)`, all uncensored, with the given covariates.
fn ladder(covariates: Vec<Vec<f64>>) -> Result<Dataset> {
    let n = covariates.len();
    let records = covariates
        .into_iter()
        .enumerate()
        .map(|(i, z)| SurvivalRecord::new((i + 1) as f64 / (n + 1) as f64, true, z))
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_records(records)
}

/// Censoring-only construction with identical unit covariates: flip the
/// indicator of the earliest event. Because the flipped subject is its own
/// risk-set mean, the score does not move and the gap is exactly zero.
pub fn identical_covariate_flip(n: usize, d: usize) -> Result<f64> {
    let z = axis(d, 1.0);
    let d_set = ladder(vec![z; n])?;
    let mut flipped = d_set.records().to_vec();
    flipped[0].event = false;
    score_gap(&d_set, &Dataset::from_records(flipped)?, &vec![0.0; d])
}

/// Adversarial pair for each neighbour relation.
///
/// * censoring-only: the earliest event has covariate `+C_Z e₁`, everyone else
///   `-C_Z e₁`, `β = -C_β e₁`; its indicator is flipped. The gap approaches
///   `2 C_Z / n` from below.
/// * covariate-only: all covariates `C_Z e₁`, `β = -C_β e₁`, the latest
///   subject's covariate sign-flipped.
/// * time-only: the covariate-only neighbour as base, with the sign-flipped
///   subject moved from the last time to half the first time.
/// * full-triple: as time-only, also restoring the moved subject's covariate.
pub fn witness(n: usize, d: usize, case: SensitivityCase, bounds: &ModelBounds) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidParameter("witness needs n >= 2".into()));
    }
    let up = axis(d, bounds.c_z);
    let down = axis(d, -bounds.c_z);
    let beta = axis(d, -bounds.c_beta);
    let (a, b) = match case {
        SensitivityCase::CensoringOnly => {
            let mut zs = vec![down.clone(); n];
            zs[0] = up.clone();
            let a = ladder(zs)?;
            let mut recs = a.records().to_vec();
            recs[0].event = false;
            (a, Dataset::from_records(recs)?)
        }
        SensitivityCase::CovariateOnly => {
            let a = ladder(vec![up.clone(); n])?;
            let mut recs = a.records().to_vec();
            recs[n - 1].covariates = down.clone();
            (a, Dataset::from_records(recs)?)
        }
        SensitivityCase::TimeOnly | SensitivityCase::FullTriple => {
            let mut zs = vec![up.clone(); n];
            zs[n - 1] = down.clone();
            let a = ladder(zs)?;
            let mut recs = a.records().to_vec();
            recs[n - 1].time = recs[0].time / 2.0;
            if case == SensitivityCase::FullTriple {
                recs[n - 1].covariates = up.clone();
            }
            (a, Dataset::from_records(recs)?)
        }
    };
    score_gap(&a, &b, &beta)
}

/// Runs `trials` random neighbouring pairs on `n` records of dimension `d`
/// and evaluates the case's witness.
pub fn empirical_sensitivity(
    n: usize,
    d: usize,
    case: SensitivityCase,
    trials: usize,
    bounds: &ModelBounds,
    seed: u64,
) -> Result<AuditResult> {
    if n < 2 || trials == 0 || d == 0 {
        return Err(Error::InvalidParameter(format!(
            "auditor needs n >= 2, d >= 1 and trials >= 1 (n = {n}, d = {d}, trials = {trials})"
        )));
    }
    let streams = StreamFactory::new(seed);
    let mut rng = streams.stream(n as u64, case as u64, Purpose::Audit);
    let mut max_observed = 0.0f64;
    for _ in 0..trials {
        let records: Vec<SurvivalRecord> = (0..n).map(|_| random_record(d, bounds, &mut rng)).collect();
        let i = rng.gen_range(0..n);
        let mut other = records.clone();
        other[i] = neighbour(&records[i], case, bounds, &mut rng);
        let beta = random_in_ball(d, bounds.c_beta, &mut rng);
        let gap = score_gap(&Dataset::new(d, records)?, &Dataset::new(d, other)?, &beta)?;
        max_observed = max_observed.max(gap);
    }
    Ok(AuditResult {
        case,
        n,
        bound: grad_sensitivity_bound(n, bounds, case).value,
        max_observed,
        lower_witness: witness(n, d, case, bounds)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_covariates_do_not_move_the_score() {
        for n in [2, 5, 10, 100] {
            assert!(identical_covariate_flip(n, 3).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn censoring_witness_approaches_two_over_n() {
        let b = ModelBounds::default();
        for n in [5, 10, 50, 200] {
            let w = witness(n, 2, SensitivityCase::CensoringOnly, &b).unwrap();
            let e2 = 2f64.exp();
            let exact = 2.0 * (n - 1) as f64 * e2 / (1.0 + (n - 1) as f64 * e2) / n as f64;
            assert!((w - exact).abs() < 1e-14, "n = {n}: {w} vs {exact}");
            assert!(w < 2.0 / n as f64);
        }
    }

    #[test]
    fn witnesses_below_bound() {
        let b = ModelBounds::default();
        for case in SensitivityCase::ALL {
            for n in [2, 5, 10, 50, 200] {
                let w = witness(n, 3, case, &b).unwrap();
                assert!(w > 0.0 && w <= grad_sensitivity_bound(n, &b, case).value, "{case:?} n={n}");
            }
        }
    }

    #[test]
    fn audit_is_deterministic() {
        let b = ModelBounds::default();
        let a = empirical_sensitivity(10, 2, SensitivityCase::FullTriple, 50, &b, 4).unwrap();
        assert_eq!(a, empirical_sensitivity(10, 2, SensitivityCase::FullTriple, 50, &b, 4).unwrap());
        assert!(a.max_observed <= a.bound);
        assert!(empirical_sensitivity(1, 2, SensitivityCase::FullTriple, 5, &b, 4).is_err());
    }
}
