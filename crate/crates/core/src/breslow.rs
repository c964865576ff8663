//! Private cumulative baseline hazard via noised dyadic trees of truncated
//! Breslow increments, and the private at-risk probability.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    config_for, effective_weights, run_rounds, BatchMode, FederationConfig, Payload, RunSeed, Server, Transcript, WeightMode,
};
use crate::privacy::{gaussian_sigma, PrivacyBudget};
use crate::rng::Purpose;
use crate::survival::{norm, sweep_events, Dataset};

/// Largest tree depth allowed; deeper trees have more leaves than any
/// realistic sample has events.
pub const MAX_DEPTH: usize = 30;

/// `h = ⌊½ log₂ Σ_s min(n_s, n_s² ε_s²)⌋`.
pub fn tree_depth(config: &FederationConfig) -> Result<usize> {
    config.validate()?;
    let eff: f64 = config
        .servers
        .iter()
        .map(|s| {
            let n = s.n as f64;
            n.min(n * n * s.budget.epsilon * s.budget.epsilon)
        })
        .sum();
    depth_for(eff)
}

fn depth_for(eff: f64) -> Result<usize> {
    if !(eff >= 2.0) {
        return Err(Error::TreeTooShallow(eff));
    }
    // 4^h <= eff, counted exactly instead of through log2.
    let mut h = 0;
    while h < MAX_DEPTH && 4f64.powi(h as i32 + 1) <= eff {
        h += 1;
    }
    Ok(h.max(1))
}

/// `c = 0.9 exp(-C_Z ‖β̂‖₂) p̂`.
pub fn truncation_constant(beta_hat: &[f64], p_hat: f64, c_z: f64) -> Result<f64> {
    if !(p_hat > 0.0 && p_hat.is_finite()) {
        return Err(Error::InvalidParameter(format!("p_hat must be positive, got {p_hat}")));
    }
    Ok(0.9 * (-c_z * norm(beta_hat)).exp() * p_hat)
}

/// Leaf `m` (0-based) sums `1/(n max(c, S⁽⁰⁾(T_i, β̂)))` over events with
/// `T_i ∈ [m/2^h, (m+1)/2^h)`; the last interval is closed at 1.
pub fn breslow_increments(data: &Dataset, beta_hat: &[f64], c: f64, h: usize) -> Result<Vec<f64>> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("truncation constant must be positive, got {c}")));
    }
    if h == 0 || h > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!("tree depth must lie in 1..={MAX_DEPTH}, got {h}")));
    }
    if beta_hat.len() != data.dimension() {
        return Err(Error::DimensionMismatch {
            expected: data.dimension(),
            actual: beta_hat.len(),
        });
    }
    let width = 1usize << h;
    let mut leaves = vec![0.0; width];
    if data.is_empty() {
        return Ok(leaves);
    }
    let n = data.len() as f64;
    sweep_events(data, beta_hat, false, |r, sums| {
        let m = ((r.time * width as f64).floor() as usize).min(width - 1);
        leaves[m] += 1.0 / (n * c.max(sums.s0 / n));
    });
    Ok(leaves)
}

/// Node sd `sqrt((1/c⁴ + 3/c²) (2 log(1/δ)/ε + 1) / (n² ε / h))`.
pub fn node_sigma(c: f64, budget: &PrivacyBudget, n: usize, h: usize) -> Result<f64> {
    budget.require_positive_delta()?;
    if !(c > 0.0) || n == 0 || h == 0 {
        return Err(Error::InvalidParameter(format!("node sigma needs c > 0, n >= 1, h >= 1 (c = {c}, n = {n}, h = {h})")));
    }
    let (e, nf) = (budget.epsilon, n as f64);
    let var = (1.0 / c.powi(4) + 3.0 / (c * c)) * (2.0 * (1.0 / budget.delta).ln() / e + 1.0) / (nf * nf * e / h as f64);
    Ok(var.sqrt())
}

/// One server's noised tree. `levels[l-1]` holds the `2^l` nodes of level `l`;
/// node `m` of level `l` covers `[(m-1)/2^l, m/2^l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTree {
    pub server: usize,
    pub depth: usize,
    pub sigma: f64,
    pub levels: Vec<Vec<f64>>,
}

impl HazardTree {
    /// Aggregates leaves upward without noise.
    pub fn from_leaves(server: usize, leaves: Vec<f64>) -> Result<Self> {
        let width = leaves.len();
        if width < 2 || !width.is_power_of_two() {
            return Err(Error::InvalidParameter(format!("leaf count must be a power of two >= 2, got {width}")));
        }
        let depth = width.trailing_zeros() as usize;
        let mut levels = vec![leaves];
        while levels[0].len() > 2 {
            let parent: Vec<f64> = levels[0].chunks(2).map(|p| p[0] + p[1]).collect();
            levels.insert(0, parent);
        }
        Ok(Self {
            server,
            depth,
            sigma: 0.0,
            levels,
        })
    }

    /// Node `x_{l,m}` with 1-based `l` and `m`.
    pub fn node(&self, l: usize, m: usize) -> f64 {
        self.levels[l - 1][m - 1]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn leaves(&self) -> &[f64] {
        &self.levels[self.depth - 1]
    }

    /// Level-major node list, level 1 first.
    pub fn flatten(&self) -> Vec<f64> {
        self.levels.iter().flatten().copied().collect()
    }

    pub fn from_flat(server: usize, sigma: f64, values: &[f64]) -> Result<Self> {
        let depth = (1..=MAX_DEPTH)
            .find(|&h| (1usize << (h + 1)) - 2 == values.len())
            .ok_or_else(|| Error::InvalidParameter(format!("{} is not a full tree node count", values.len())))?;
        let mut levels = Vec::with_capacity(depth);
        let mut start = 0;
        for l in 1..=depth {
            levels.push(values[start..start + (1 << l)].to_vec());
            start += 1 << l;
        }
        Ok(Self {
            server,
            depth,
            sigma,
            levels,
        })
    }

    /// The dyadic prefix `Λ̂_s(t)` of this tree alone.
    pub fn prefix(&self, t: f64) -> f64 {
        let h = self.depth;
        let width = 1usize << h;
        let j = if t <= 0.0 {
            0
        } else {
            ((t * width as f64).floor() as usize).min(width)
        };
        if j == width {
            return self.levels[0].iter().sum();
        }
        (1..=h)
            .filter(|&l| (j >> (h - l)) & 1 == 1)
            .map(|l| self.node(l, j >> (h - l)))
            .sum()
    }
}

/// Inputs shared by all servers' trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardParams {
    pub beta_hat: Vec<f64>,
    pub p_hat: f64,
    pub c_z: f64,
    pub noise_multiplier: f64,
}

impl HazardParams {
    pub fn new(beta_hat: Vec<f64>, p_hat: f64, c_z: f64) -> Self {
        Self {
            beta_hat,
            p_hat,
            c_z,
            noise_multiplier: 1.0,
        }
    }

    pub fn with_noise_multiplier(mut self, m: f64) -> Self {
        self.noise_multiplier = m;
        self
    }
}

/// Leaves, upward sums, then independent noise on every node of levels `1..=h`.
pub fn build_private_tree<R: Rng + ?Sized>(
    server: usize,
    data: &Dataset,
    budget: &PrivacyBudget,
    params: &HazardParams,
    h: usize,
    rng: &mut R,
) -> Result<HazardTree> {
    if !(params.noise_multiplier >= 0.0) {
        return Err(Error::InvalidParameter("noise multiplier must be nonnegative".into()));
    }
    let c = truncation_constant(&params.beta_hat, params.p_hat, params.c_z)?;
    let mut tree = HazardTree::from_leaves(server, breslow_increments(data, &params.beta_hat, c, h)?)?;
    tree.sigma = node_sigma(c, budget, data.len(), h)? * params.noise_multiplier;
    for x in tree.levels.iter_mut().flatten() {
        let w: f64 = rng.sample(StandardNormal);
        *x += tree.sigma * w;
    }
    Ok(tree)
}

/// Weighted combination of per-server trees of a common depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardEstimate {
    pub trees: Vec<HazardTree>,
    pub weights: Vec<f64>,
}

impl HazardEstimate {
    pub fn new(trees: Vec<HazardTree>, weights: Vec<f64>) -> Result<Self> {
        if trees.is_empty() || trees.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} trees for {} weights",
                trees.len(),
                weights.len()
            )));
        }
        let h = trees[0].depth;
        if trees.iter().any(|t| t.depth != h) {
            return Err(Error::InvalidParameter("trees must share one depth".into()));
        }
        Ok(Self { trees, weights })
    }

    pub fn depth(&self) -> usize {
        self.trees[0].depth
    }

    /// `{m / 2^h : m = 0..=2^h}`.
    pub fn grid(&self) -> Vec<f64> {
        let width = 1usize << self.depth();
        (0..=width).map(|m| m as f64 / width as f64).collect()
    }

    /// Writes `t,cumulative_hazard,survival` over the dyadic grid.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "cumulative_hazard", "survival"])?;
        for t in self.grid() {
            w.serialize((t, query_hazard(self, t), survival_estimate(self, t)))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `Λ̂(t) = Σ_s v_s Σ_l 1{b_l = 1} x_{s,l,⌊j/2^{h-l}⌋}` with `j = min(⌊2^h t⌋, 2^h)`;
/// `j = 2^h` returns the weighted level-1 total. Times below 0 give 0 and
/// times above 1 are treated as 1.
pub fn query_hazard(estimate: &HazardEstimate, t: f64) -> f64 {
    estimate.trees.iter().zip(&estimate.weights).map(|(tree, v)| v * tree.prefix(t)).sum()
}

/// `exp(-Λ̂(t))` clamped to `[0, 1]`.
pub fn survival_estimate(estimate: &HazardEstimate, t: f64) -> f64 {
    (-query_hazard(estimate, t)).exp().clamp(0.0, 1.0)
}

/// Hazard estimate together with the released transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct BreslowFit {
    pub estimate: HazardEstimate,
    pub transcript: Transcript,
}

/// One-shot federated release: every server publishes its noised tree, the
/// estimate is assembled from the transcript.
pub fn run_fdp_breslow(servers: &[Server], params: &HazardParams, mode: WeightMode, seed: RunSeed) -> Result<BreslowFit> {
    let config = config_for(servers, 1)?;
    let h = tree_depth(&config)?;
    run_fdp_breslow_with_depth(servers, params, mode, h, seed)
}

/// As [`run_fdp_breslow`] with an explicit depth.
pub fn run_fdp_breslow_with_depth(
    servers: &[Server],
    params: &HazardParams,
    mode: WeightMode,
    h: usize,
    seed: RunSeed,
) -> Result<BreslowFit> {
    let config = config_for(servers, 1)?;
    let weights = effective_weights(&config, mode)?;
    let transcript = run_rounds(&config, servers, BatchMode::FullData, seed, Purpose::TreeNoise, |input, rng| {
        let tree = build_private_tree(input.server, input.batch, &input.budget, params, h, rng)?;
        Ok((Payload::NoisedTreeNodes(tree.flatten()), tree.sigma))
    })?;
    let trees = transcript
        .messages
        .iter()
        .map(|m| HazardTree::from_flat(m.server, m.sigma, m.payload.values()))
        .collect::<Result<Vec<_>>>()?;
    Ok(BreslowFit {
        estimate: HazardEstimate::new(trees, weights)?,
        transcript,
    })
}

/// `sqrt(2 log(1.25/δ)) / (n ε)`.
pub fn at_risk_sigma(n: usize, budget: &PrivacyBudget) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    gaussian_sigma(1.0 / n as f64, budget)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtRiskEstimate {
    pub p_hat: f64,
    pub transcript: Transcript,
}

/// Each server releases its share of records still at risk at the horizon
/// plus Gaussian noise; the shares are pooled with weights `n_s / Σ n`.
pub fn estimate_at_risk_probability(servers: &[Server], noise_multiplier: f64, seed: RunSeed) -> Result<AtRiskEstimate> {
    if !(noise_multiplier >= 0.0) {
        return Err(Error::InvalidParameter("noise multiplier must be nonnegative".into()));
    }
    let config = config_for(servers, 1)?;
    let transcript = run_rounds(&config, servers, BatchMode::FullData, seed, Purpose::AtRiskNoise, |input, rng| {
        let n = input.batch.len();
        let share = input.batch.records().iter().filter(|r| r.time >= 1.0).count() as f64 / n as f64;
        let sigma = at_risk_sigma(n, &input.budget)? * noise_multiplier;
        let w: f64 = rng.sample(StandardNormal);
        Ok((Payload::NoisedScalar(share + sigma * w), sigma))
    })?;
    let total = config.total_records() as f64;
    let p_hat = transcript
        .messages
        .iter()
        .zip(&config.servers)
        .map(|(m, s)| s.n as f64 * m.payload.values()[0])
        .sum::<f64>()
        / total;
    Ok(AtRiskEstimate { p_hat, transcript })
}

/// Post-processing that keeps a noised probability usable as a truncation
/// level: clamps into `[1/total_n, 1]`.
pub fn clamp_probability(p: f64, total_n: usize) -> f64 {
    p.clamp(1.0 / total_n.max(1) as f64, 1.0)
}
