//! Cox-model survival data with exponential censoring and truncation at the
//! horizon `t = 1`.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::survival::{dot, norm, project_ball, Dataset, ModelBounds, SurvivalRecord};

/// Baseline hazard. Either a constant rate or a piecewise-linear cumulative
/// hazard through the given knots (extended past the last knot with the last
/// slope).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    Constant { rate: f64 },
    Tabulated { times: Vec<f64>, cumulative: Vec<f64> },
}

impl Baseline {
    pub fn constant(rate: f64) -> Result<Self> {
        let b = Baseline::Constant { rate };
        b.validate()?;
        Ok(b)
    }

    pub fn tabulated(times: Vec<f64>, cumulative: Vec<f64>) -> Result<Self> {
        let b = Baseline::Tabulated { times, cumulative };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Baseline::Constant { rate } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(Error::InvalidParameter(format!("baseline rate must be positive, got {rate}")));
                }
            }
            Baseline::Tabulated { times, cumulative } => {
                if times.len() != cumulative.len() || times.len() < 2 {
                    return Err(Error::NonInvertibleBaseline(
                        "need at least two knots with matching lengths".into(),
                    ));
                }
                if times[0] != 0.0 || cumulative[0] != 0.0 {
                    return Err(Error::NonInvertibleBaseline("first knot must be (0, 0)".into()));
                }
                for w in 0..times.len() - 1 {
                    if !(times[w + 1] > times[w]) {
                        return Err(Error::NonInvertibleBaseline("knot times must increase".into()));
                    }
                    if !(cumulative[w + 1] > cumulative[w]) {
                        return Err(Error::NonInvertibleBaseline(format!(
                            "cumulative hazard is flat or decreasing on [{}, {}]",
                            times[w],
                            times[w + 1]
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// `Λ₀(t)`.
    pub fn cumulative(&self, t: f64) -> f64 {
        match self {
            Baseline::Constant { rate } => rate * t,
            Baseline::Tabulated { times, cumulative } => {
                let k = times.len();
                let seg = match times.iter().position(|&x| x > t) {
                    Some(0) => return 0.0,
                    Some(i) => i - 1,
                    None => k - 2,
                };
                let slope = (cumulative[seg + 1] - cumulative[seg]) / (times[seg + 1] - times[seg]);
                cumulative[seg] + slope * (t - times[seg])
            }
        }
    }

    /// `Λ₀⁻¹(y)` for `y >= 0`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        self.validate()?;
        Ok(match self {
            Baseline::Constant { rate } => y / rate,
            Baseline::Tabulated { times, cumulative } => {
                let k = times.len();
                let seg = match cumulative.iter().position(|&c| c > y) {
                    Some(0) => return Ok(0.0),
                    Some(i) => i - 1,
                    None => k - 2,
                };
                let slope = (cumulative[seg + 1] - cumulative[seg]) / (times[seg + 1] - times[seg]);
                times[seg] + (y - cumulative[seg]) / slope
            }
        })
    }

    /// Upper bound on the hazard rate over `[0, 1]`.
    pub fn max_rate(&self) -> f64 {
        match self {
            Baseline::Constant { rate } => *rate,
            Baseline::Tabulated { times, cumulative } => (0..times.len() - 1)
                .filter(|&w| times[w] < 1.0)
                .map(|w| (cumulative[w + 1] - cumulative[w]) / (times[w + 1] - times[w]))
                .fold(0.0, f64::max),
        }
    }
}

/// Distribution of the covariate vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Each coordinate i.i.d. uniform on `(-1/√d, 1/√d)`.
    Uniform,
    /// `N(0, I/d)` projected onto the unit ball.
    TruncatedGaussian,
}

/// Data-generating model: true coefficients, baseline hazard, censoring rate
/// and covariate law. The horizon is fixed at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModelSpec {
    pub beta0: Vec<f64>,
    pub baseline: Baseline,
    pub censoring_rate: f64,
    pub covariate_law: CovariateLaw,
}

impl CoxModelSpec {
    pub fn new(beta0: Vec<f64>, baseline: Baseline, censoring_rate: f64, covariate_law: CovariateLaw) -> Result<Self> {
        let spec = Self {
            beta0,
            baseline,
            censoring_rate,
            covariate_law,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// `β₀ = (0, 0.5, 0.8)`, unit baseline hazard, uniform covariates and
    /// `Exp(censoring_rate)` censoring.
    pub fn reference(censoring_rate: f64) -> Self {
        Self {
            beta0: vec![0.0, 0.5, 0.8],
            baseline: Baseline::Constant { rate: 1.0 },
            censoring_rate,
            covariate_law: CovariateLaw::Uniform,
        }
    }

    pub fn dimension(&self) -> usize {
        self.beta0.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.beta0.is_empty() {
            return Err(Error::InvalidParameter("beta0 must be nonempty".into()));
        }
        if !(self.censoring_rate > 0.0 && self.censoring_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "censoring rate must be positive, got {}",
                self.censoring_rate
            )));
        }
        self.baseline.validate()
    }

    /// Also checks `‖β₀‖ <= c_beta`.
    pub fn validate_bounds(&self, bounds: &ModelBounds) -> Result<()> {
        self.validate()?;
        if norm(&self.beta0) > bounds.c_beta + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "‖beta0‖ = {} exceeds c_beta = {}",
                norm(&self.beta0),
                bounds.c_beta
            )));
        }
        Ok(())
    }
}

pub fn sample_covariates<R: Rng + ?Sized>(spec: &CoxModelSpec, rng: &mut R) -> Vec<f64> {
    let d = spec.dimension();
    let half = 1.0 / (d as f64).sqrt();
    match spec.covariate_law {
        CovariateLaw::Uniform => (0..d).map(|_| rng.gen_range(-half..half)).collect(),
        CovariateLaw::TruncatedGaussian => {
            let z: Vec<f64> = (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal) * half)
                .collect();
            project_ball(&z, 1.0)
        }
    }
}

/// Event time from a unit-exponential draw: `Λ₀⁻¹(e · exp(-β₀ᵀz))`.
pub fn event_time_from_exponential(spec: &CoxModelSpec, z: &[f64], e: f64) -> Result<f64> {
    spec.baseline.inverse(e * (-dot(&spec.beta0, z)).exp())
}

pub fn sample_event_time<R: Rng + ?Sized>(spec: &CoxModelSpec, z: &[f64], rng: &mut R) -> Result<f64> {
    let e: f64 = rng.sample(Exp1);
    event_time_from_exponential(spec, z, e)
}

/// `(min(T̃, C, 1), 1{T̃ <= min(1, C)})`.
pub fn observe(event_time: f64, censoring_time: f64) -> (f64, bool) {
    let time = event_time.min(censoring_time).min(1.0);
    (time, event_time <= censoring_time.min(1.0))
}

pub fn sample_record<R: Rng + ?Sized>(spec: &CoxModelSpec, rng: &mut R) -> Result<SurvivalRecord> {
    let z = sample_covariates(spec, rng);
    let event_time = sample_event_time(spec, &z, rng)?;
    let censoring_time = rng.sample::<f64, _>(Exp1) / spec.censoring_rate;
    let (time, event) = observe(event_time, censoring_time);
    SurvivalRecord::new(time, event, z)
}

pub fn generate_dataset<R: Rng + ?Sized>(spec: &CoxModelSpec, n: usize, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    let records = (0..n).map(|_| sample_record(spec, rng)).collect::<Result<Vec<_>>>()?;
    Dataset::new(spec.dimension(), records)
}

/// `Λ₀(t)`.
pub fn true_cumulative_hazard(spec: &CoxModelSpec, t: f64) -> f64 {
    spec.baseline.cumulative(t)
}

/// `β ~ N(0, I_d)` projected onto the unit ball.
pub fn random_coefficients<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    let b: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    project_ball(&b, 1.0)
}

/// Monte-Carlo value of `P(Y(1) = 1)`, averaging the exact conditional
/// probability `exp(-Λ₀(1) e^{β₀ᵀZ}) e^{-α}` over covariate draws.
pub fn at_risk_probability<R: Rng + ?Sized>(spec: &CoxModelSpec, samples: usize, rng: &mut R) -> f64 {
    let lambda1 = spec.baseline.cumulative(1.0);
    let total: f64 = (0..samples)
        .map(|_| {
            let z = sample_covariates(spec, rng);
            (-lambda1 * dot(&spec.beta0, &z).exp()).exp()
        })
        .sum();
    total / samples as f64 * (-spec.censoring_rate).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, StreamFactory};
    use approx::assert_relative_eq;

    #[test]
    fn covariate_support() {
        let mut rng = StreamFactory::new(1).stream(0, 0, Purpose::BetaData);
        let mut spec = CoxModelSpec::reference(0.3);
        spec.beta0 = vec![0.2];
        for _ in 0..1000 {
            let z = sample_covariates(&spec, &mut rng);
            assert!(z[0] > -1.0 && z[0] < 1.0);
        }
        spec.beta0 = vec![0.0; 4];
        for law in [CovariateLaw::Uniform, CovariateLaw::TruncatedGaussian] {
            spec.covariate_law = law;
            for _ in 0..1000 {
                assert!(norm(&sample_covariates(&spec, &mut rng)) <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn inverse_transform_examples() {
        let mut spec = CoxModelSpec::reference(0.3);
        spec.beta0 = vec![1.0];
        assert_relative_eq!(event_time_from_exponential(&spec, &[0.0], 1.0).unwrap(), 1.0);
        assert_relative_eq!(
            event_time_from_exponential(&spec, &[2f64.ln()], 0.5).unwrap(),
            0.25,
            max_relative = 1e-14
        );
    }

    #[test]
    fn observation_rule() {
        assert_eq!(observe(0.3, 0.5), (0.3, true));
        assert_eq!(observe(2.0, 3.0), (1.0, false));
        assert_eq!(observe(0.7, 0.4), (0.4, false));
    }

    #[test]
    fn cumulative_hazard_examples() {
        let spec = CoxModelSpec::reference(0.3);
        assert_eq!(true_cumulative_hazard(&spec, 0.5), 0.5);
        assert_eq!(true_cumulative_hazard(&spec, 0.0), 0.0);
        let mut two = spec.clone();
        two.baseline = Baseline::constant(2.0).unwrap();
        assert_eq!(true_cumulative_hazard(&two, 0.25), 0.5);
    }

    #[test]
    fn tabulated_baseline() {
        let b = Baseline::tabulated(vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 1.25]).unwrap();
        assert_relative_eq!(b.cumulative(0.25), 0.125);
        assert_relative_eq!(b.cumulative(0.75), 0.75);
        assert_relative_eq!(b.cumulative(1.5), 2.25);
        for y in [0.0, 0.1, 0.25, 0.9, 3.0] {
            assert_relative_eq!(b.cumulative(b.inverse(y).unwrap()), y, max_relative = 1e-12);
        }
        assert_eq!(b.max_rate(), 2.0);
        assert!(matches!(
            Baseline::tabulated(vec![0.0, 0.5, 1.0], vec![0.0, 0.5, 0.5]),
            Err(Error::NonInvertibleBaseline(_))
        ));
        assert!(Baseline::tabulated(vec![0.1, 1.0], vec![0.0, 1.0]).is_err());
        let bad = Baseline::Tabulated {
            times: vec![0.0, 1.0],
            cumulative: vec![0.0, 0.0],
        };
        assert!(bad.inverse(0.5).is_err());
    }

    #[test]
    fn generated_records_are_valid_and_deterministic() {
        let spec = CoxModelSpec::reference(0.3);
        let f = StreamFactory::new(3);
        let a = generate_dataset(&spec, 500, &mut f.stream(0, 0, Purpose::BetaData)).unwrap();
        let b = generate_dataset(&spec, 500, &mut f.stream(0, 0, Purpose::BetaData)).unwrap();
        assert_eq!(a, b);
        assert!(a.records().iter().all(|r| (0.0..=1.0).contains(&r.time) && r.covariate_norm() <= 1.0));
        assert!(a.check_bounds(&ModelBounds::default()).is_ok());
        // Truncated at the horizon means censored.
        assert!(a.records().iter().filter(|r| r.time == 1.0).all(|r| !r.event));
    }

    #[test]
    fn spec_validation() {
        assert!(CoxModelSpec::new(vec![0.1], Baseline::Constant { rate: 1.0 }, 0.0, CovariateLaw::Uniform).is_err());
        assert!(CoxModelSpec::new(vec![], Baseline::Constant { rate: 1.0 }, 0.3, CovariateLaw::Uniform).is_err());
        let big = CoxModelSpec::new(vec![2.0], Baseline::Constant { rate: 1.0 }, 0.3, CovariateLaw::Uniform).unwrap();
        assert!(big.validate_bounds(&ModelBounds::default()).is_err());
    }

    #[test]
    fn spec_json_roundtrip() {
        let spec = CoxModelSpec {
            baseline: Baseline::tabulated(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap(),
            ..CoxModelSpec::reference(0.9)
        };
        let s = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<CoxModelSpec>(&s).unwrap(), spec);
    }
}
