//! Cox partial-likelihood machinery on the horizon `[0, 1]`.
//!
//! Covariates are time-constant, so every integral against `dN_i` collapses to
//! a sum over event times. Risk sets are event-inclusive (`T_j >= T_i`), and
//! tied event times share one risk set (Breslow ties).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject: observed time, event indicator and covariate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn new(time: f64, event: bool, covariates: Vec<f64>) -> Result<Self> {
        if !(0.0..=1.0).contains(&time) {
            return Err(Error::InvalidRecord(format!("time {time} outside [0, 1]")));
        }
        if covariates.is_empty() {
            return Err(Error::InvalidRecord("empty covariate vector".into()));
        }
        if covariates.iter().any(|z| !z.is_finite()) {
            return Err(Error::InvalidRecord("non-finite covariate".into()));
        }
        Ok(Self {
            time,
            event,
            covariates,
        })
    }

    pub fn dimension(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariate_norm(&self) -> f64 {
        norm(&self.covariates)
    }
}

/// Bounds on covariate norms (`c_z`) and coefficient norms (`c_beta`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelBounds {
    pub c_z: f64,
    pub c_beta: f64,
}

impl ModelBounds {
    pub fn new(c_z: f64, c_beta: f64) -> Result<Self> {
        if !(c_z > 0.0 && c_z.is_finite()) || !(c_beta > 0.0 && c_beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "model bounds must be positive, got c_z = {c_z}, c_beta = {c_beta}"
            )));
        }
        Ok(Self { c_z, c_beta })
    }

    /// `max(c_z, c_z^2) * exp(2 c_z c_beta)`, the factor shared by every
    /// gradient-noise calibration.
    pub fn noise_factor(&self) -> f64 {
        self.c_z.max(self.c_z * self.c_z) * (2.0 * self.c_z * self.c_beta).exp()
    }
}

impl Default for ModelBounds {
    fn default() -> Self {
        Self {
            c_z: 1.0,
            c_beta: 1.0,
        }
    }
}

/// An immutable collection of records sharing one covariate dimension.
///
/// Keeps a time-descending index so risk-set sums are a single sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SurvivalRecord>,
    dimension: usize,
    by_time_desc: Vec<usize>,
}

impl Dataset {
    pub fn new(dimension: usize, records: Vec<SurvivalRecord>) -> Result<Self> {
        if dimension == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if let Some(r) = records.iter().find(|r| r.dimension() != dimension) {
            return Err(Error::DimensionMismatch {
                expected: dimension,
                actual: r.dimension(),
            });
        }
        let mut by_time_desc: Vec<usize> = (0..records.len()).collect();
        by_time_desc.sort_by(|&a, &b| records[b].time.total_cmp(&records[a].time));
        Ok(Self {
            records,
            dimension,
            by_time_desc,
        })
    }

    /// Dataset from a nonempty record list; the dimension is taken from the first record.
    pub fn from_records(records: Vec<SurvivalRecord>) -> Result<Self> {
        let d = records.first().ok_or(Error::EmptyDataset)?.dimension();
        Self::new(d, records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SurvivalRecord> {
        self.records
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Copy of the records in `range`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.dimension, self.records[range].to_vec())
    }

    /// Fails if any covariate vector is longer than `bounds.c_z`.
    pub fn check_bounds(&self, bounds: &ModelBounds) -> Result<()> {
        let tol = 1e-12 * bounds.c_z.max(1.0);
        match self
            .records
            .iter()
            .position(|r| r.covariate_norm() > bounds.c_z + tol)
        {
            Some(i) => Err(Error::InvalidRecord(format!(
                "record {i} has covariate norm {} > c_z = {}",
                self.records[i].covariate_norm(),
                bounds.c_z
            ))),
            None => Ok(()),
        }
    }

    fn require_nonempty(&self) -> Result<()> {
        if self.records.is_empty() {
            Err(Error::EmptyDataset)
        } else {
            Ok(())
        }
    }

    fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                expected: self.dimension,
                actual: beta.len(),
            });
        }
        Ok(())
    }
}

/// `Y_i(t) = 1{T_i >= t}`.
pub fn at_risk(record: &SurvivalRecord, t: f64) -> bool {
    record.time >= t
}

/// Normalized risk-set moments `S^(0)`, `S^(1)`, `S^(2)` at one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub s0: f64,
    pub s1: Vec<f64>,
    pub s2: Vec<Vec<f64>>,
}

impl Moments {
    /// `Z̄ = S1 / S0`.
    pub fn zbar(&self) -> Vec<f64> {
        self.s1.iter().map(|x| x / self.s0).collect()
    }

    /// `V = S2 / S0 - Z̄ Z̄ᵀ`.
    pub fn variance(&self) -> Vec<Vec<f64>> {
        let zbar = self.zbar();
        self.s2
            .iter()
            .enumerate()
            .map(|(a, row)| {
                row.iter()
                    .enumerate()
                    .map(|(b, x)| x / self.s0 - zbar[a] * zbar[b])
                    .collect()
            })
            .collect()
    }
}

/// Risk-set moments at time `t`. Fails with [`Error::DegenerateRiskSet`] when
/// nobody is at risk.
pub fn s_moments(data: &Dataset, t: f64, beta: &[f64]) -> Result<Moments> {
    data.require_nonempty()?;
    data.check_beta(beta)?;
    let d = data.dimension;
    let n = data.len() as f64;
    let mut m = Moments {
        s0: 0.0,
        s1: vec![0.0; d],
        s2: vec![vec![0.0; d]; d],
    };
    for r in data.records.iter().filter(|r| at_risk(r, t)) {
        let w = dot(beta, &r.covariates).exp();
        m.s0 += w;
        for a in 0..d {
            m.s1[a] += w * r.covariates[a];
            for b in 0..d {
                m.s2[a][b] += w * r.covariates[a] * r.covariates[b];
            }
        }
    }
    if m.s0 <= 0.0 {
        return Err(Error::DegenerateRiskSet(t));
    }
    m.s0 /= n;
    m.s1.iter_mut().for_each(|x| *x /= n);
    m.s2.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(m)
}

/// Unnormalized risk-set sums accumulated during a time-descending sweep.
pub(crate) struct RiskSums {
    pub s0: f64,
    pub s1: Vec<f64>,
    pub s2: Option<Vec<Vec<f64>>>,
}

/// Visits every event in time-descending order together with the sums over
/// its (tie-inclusive) risk set.
pub(crate) fn sweep_events<F>(data: &Dataset, beta: &[f64], second_order: bool, mut visit: F)
where
    F: FnMut(&SurvivalRecord, &RiskSums),
{
    let d = data.dimension;
    let mut sums = RiskSums {
        s0: 0.0,
        s1: vec![0.0; d],
        s2: second_order.then(|| vec![vec![0.0; d]; d]),
    };
    let order = &data.by_time_desc;
    let mut start = 0;
    while start < order.len() {
        let t = data.records[order[start]].time;
        let mut end = start;
        while end < order.len() && data.records[order[end]].time == t {
            let r = &data.records[order[end]];
            let w = dot(beta, &r.covariates).exp();
            sums.s0 += w;
            for a in 0..d {
                sums.s1[a] += w * r.covariates[a];
            }
            if let Some(s2) = sums.s2.as_mut() {
                for a in 0..d {
                    for b in 0..d {
                        s2[a][b] += w * r.covariates[a] * r.covariates[b];
                    }
                }
            }
            end += 1;
        }
        for &i in &order[start..end] {
            let r = &data.records[i];
            if r.event {
                visit(r, &sums);
            }
        }
        start = end;
    }
}

/// Normalized log partial likelihood
/// `(1/n) Σ_events [βᵀZ_i - log Σ_j Y_j(T_i) exp(βᵀZ_j)]`.
pub fn partial_log_likelihood(data: &Dataset, beta: &[f64]) -> Result<f64> {
    data.require_nonempty()?;
    data.check_beta(beta)?;
    let mut total = 0.0;
    sweep_events(data, beta, false, |r, sums| {
        total += dot(beta, &r.covariates) - sums.s0.ln();
    });
    Ok(total / data.len() as f64)
}

/// Score `(1/n) Σ_events (Z_i - Z̄(T_i, β))`.
pub fn gradient(data: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
    data.require_nonempty()?;
    data.check_beta(beta)?;
    let d = data.dimension;
    let mut g = vec![0.0; d];
    sweep_events(data, beta, false, |r, sums| {
        for a in 0..d {
            g[a] += r.covariates[a] - sums.s1[a] / sums.s0;
        }
    });
    let n = data.len() as f64;
    g.iter_mut().for_each(|x| *x /= n);
    Ok(g)
}

/// `(1/n) Σ_events V(T_i, β)`; the negative Hessian of the log partial
/// likelihood, symmetric positive semi-definite.
pub fn hessian(data: &Dataset, beta: &[f64]) -> Result<Vec<Vec<f64>>> {
    data.require_nonempty()?;
    data.check_beta(beta)?;
    let d = data.dimension;
    let mut h = vec![vec![0.0; d]; d];
    sweep_events(data, beta, true, |_, sums| {
        let s2 = sums.s2.as_ref().expect("second-order sweep");
        for a in 0..d {
            let za = sums.s1[a] / sums.s0;
            for b in 0..d {
                h[a][b] += s2[a][b] / sums.s0 - za * sums.s1[b] / sums.s0;
            }
        }
    });
    let n = data.len() as f64;
    h.iter_mut().flatten().for_each(|x| *x /= n);
    Ok(h)
}

/// Euclidean projection onto the closed ball of the given radius.
pub fn project_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let nv = norm(v);
    if nv <= radius {
        v.to_vec()
    } else {
        let mut scale = radius / nv;
        loop {
            let out: Vec<f64> = v.iter().map(|x| x * scale).collect();
            if norm(&out) <= radius {
                return out;
            }
            scale *= 1.0 - f64::EPSILON;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
