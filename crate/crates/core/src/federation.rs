//! Single-process simulation of the federated protocol.
//!
//! Servers keep their records private. A round function sees only its own
//! batch and the public broadcast (every message released so far) and returns
//! a privatized payload. The harness checks each payload before publishing it.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::privacy::PrivacyBudget;
use crate::rng::{Purpose, StreamFactory};
use crate::survival::Dataset;

/// Size and budget of one server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerSpec {
    pub n: usize,
    pub budget: PrivacyBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub servers: Vec<ServerSpec>,
    pub rounds: usize,
    pub dimension: usize,
}

impl FederationConfig {
    pub fn new(servers: Vec<ServerSpec>, rounds: usize, dimension: usize) -> Result<Self> {
        let config = Self {
            servers,
            rounds,
            dimension,
        };
        config.validate()?;
        Ok(config)
    }

    /// `S` identical servers.
    pub fn homogeneous(servers: usize, n: usize, budget: PrivacyBudget, rounds: usize, dimension: usize) -> Result<Self> {
        Self::new(vec![ServerSpec { n, budget }; servers], rounds, dimension)
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers.is_empty() {
            return Err(Error::InvalidParameter("federation needs at least one server".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidParameter("rounds must be at least 1".into()));
        }
        if self.dimension == 0 {
            return Err(Error::InvalidParameter("dimension must be at least 1".into()));
        }
        if let Some(s) = self.servers.iter().position(|s| s.n == 0) {
            return Err(Error::InvalidParameter(format!("server {s} has no records")));
        }
        Ok(())
    }

    /// `b_s = ⌊n_s / K⌋`.
    pub fn batch_size(&self, server: usize) -> usize {
        self.servers[server].n / self.rounds
    }

    /// Fails unless every server has a nonempty batch.
    pub fn validate_batched(&self) -> Result<()> {
        self.validate()?;
        for (s, spec) in self.servers.iter().enumerate() {
            if spec.n / self.rounds == 0 {
                return Err(Error::EmptyBatch {
                    server: s,
                    n: spec.n,
                    rounds: self.rounds,
                });
            }
        }
        Ok(())
    }

    pub fn total_records(&self) -> usize {
        self.servers.iter().map(|s| s.n).sum()
    }
}

/// How per-server effective sample sizes are formed before normalizing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMode {
    /// `min(b_s, b_s² ε_s² / d)` with batch sizes `b_s = ⌊n_s/K⌋`.
    BatchedBeta,
    /// `min(n_s, n_s² ε_s² / d)` on full server data.
    FullBeta,
    /// `min(n_s, n_s² ε_s²)`.
    Hazard,
    /// `min(n_s, n_s² ε_s² / d)`, the coefficient-weight form with one round.
    HazardLiteral,
}

pub fn effective_weights(config: &FederationConfig, mode: WeightMode) -> Result<Vec<f64>> {
    config.validate()?;
    let d = config.dimension as f64;
    let sizes: Vec<f64> = config
        .servers
        .iter()
        .enumerate()
        .map(|(s, spec)| {
            let e2 = spec.budget.epsilon * spec.budget.epsilon;
            let (m, scale) = match mode {
                WeightMode::BatchedBeta => (config.batch_size(s) as f64, d),
                WeightMode::FullBeta | WeightMode::HazardLiteral => (spec.n as f64, d),
                WeightMode::Hazard => (spec.n as f64, 1.0),
            };
            m.min(m * m * e2 / scale)
        })
        .collect();
    let total: f64 = sizes.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroEffectiveSize);
    }
    Ok(sizes.iter().map(|m| m / total).collect())
}

/// A server: id, private records and budget.
#[derive(Debug, Clone)]
pub struct Server {
    pub id: usize,
    pub budget: PrivacyBudget,
    data: Dataset,
}

impl Server {
    pub fn new(id: usize, data: Dataset, budget: PrivacyBudget) -> Self {
        Self { id, budget, data }
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    /// `K` disjoint consecutive ranges of size `⌊n/K⌋`; the remainder is unused.
    pub fn batch_ranges(&self, rounds: usize) -> Vec<Range<usize>> {
        batch_ranges(self.n(), rounds)
    }

    pub fn spec(&self) -> ServerSpec {
        ServerSpec {
            n: self.n(),
            budget: self.budget,
        }
    }
}

pub fn batch_ranges(n: usize, rounds: usize) -> Vec<Range<usize>> {
    let b = n.checked_div(rounds).unwrap_or(0);
    (0..rounds).map(|k| k * b..(k + 1) * b).collect()
}

/// Builds a config from a server list.
pub fn config_for(servers: &[Server], rounds: usize) -> Result<FederationConfig> {
    let d = servers
        .first()
        .map(|s| s.data.dimension())
        .ok_or_else(|| Error::InvalidParameter("federation needs at least one server".into()))?;
    if let Some(s) = servers.iter().find(|s| s.data.dimension() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: s.data.dimension(),
        });
    }
    FederationConfig::new(servers.iter().map(Server::spec).collect(), rounds, d)
}

/// The closed set of things a server may release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    NoisedVector(Vec<f64>),
    NoisedScalar(f64),
    NoisedTreeNodes(Vec<f64>),
}

impl Payload {
    pub fn values(&self) -> &[f64] {
        match self {
            Payload::NoisedVector(v) | Payload::NoisedTreeNodes(v) => v,
            Payload::NoisedScalar(x) => std::slice::from_ref(x),
        }
    }
}

/// One released message: round (1-based), server, payload and the noise
/// standard deviation used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub round: usize,
    pub server: usize,
    #[serde(flatten)]
    pub payload: Payload,
    pub sigma: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    /// Messages of round `k` in server order.
    pub fn round(&self, k: usize) -> impl Iterator<Item = &Message> {
        self.messages.iter().filter(move |m| m.round == k)
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for m in &self.messages {
            serde_json::to_writer(&mut out, m)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut messages = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            messages.push(serde_json::from_str(&line)?);
        }
        Ok(Self { messages })
    }

    /// Re-checks every message against the raw records of all servers.
    pub fn check_isolation(&self, servers: &[Server]) -> Result<()> {
        let guards: Vec<RecordGuard> = servers.iter().map(|s| RecordGuard::new(&s.data)).collect();
        for m in &self.messages {
            for g in &guards {
                g.check(m)?;
            }
        }
        Ok(())
    }
}

/// Detects payloads that embed a raw record: a full `(T, Δ, Z)` triple, or,
/// for `d >= 2`, a nonzero covariate vector, appearing contiguously.
struct RecordGuard {
    d: usize,
    covariates: HashSet<Vec<u64>>,
    triples: HashSet<Vec<u64>>,
}

impl RecordGuard {
    fn new(data: &Dataset) -> Self {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let mut covariates = HashSet::new();
        let mut triples = HashSet::new();
        for r in data.records() {
            if data.dimension() >= 2 && r.covariates.iter().any(|&z| z != 0.0) {
                covariates.insert(bits(&r.covariates));
            }
            let mut t = vec![r.time, if r.event { 1.0 } else { 0.0 }];
            t.extend_from_slice(&r.covariates);
            triples.insert(bits(&t));
        }
        Self {
            d: data.dimension(),
            covariates,
            triples,
        }
    }

    fn check(&self, m: &Message) -> Result<()> {
        let values = m.payload.values();
        let violation = |reason: String| Error::IsolationViolation {
            server: m.server,
            round: m.round,
            reason,
        };
        if values.iter().any(|x| !x.is_finite()) || !(m.sigma >= 0.0 && m.sigma.is_finite()) {
            return Err(violation("non-finite payload or sigma".into()));
        }
        let bits: Vec<u64> = values.iter().map(|x| x.to_bits()).collect();
        if !self.covariates.is_empty() && bits.windows(self.d).any(|w| self.covariates.contains(w)) {
            return Err(violation("payload embeds a raw covariate vector".into()));
        }
        if bits.windows(self.d + 2).any(|w| self.triples.contains(w)) {
            return Err(violation("payload embeds a raw record".into()));
        }
        Ok(())
    }
}

/// Which records a server feeds to round `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    /// The `k`-th of `K` disjoint batches.
    Batched,
    /// All records, every round.
    FullData,
}

/// What a round function may look at.
pub struct RoundInput<'a> {
    /// 1-based round index.
    pub round: usize,
    pub server: usize,
    pub budget: PrivacyBudget,
    pub batch: &'a Dataset,
    /// Every message released in earlier rounds.
    pub broadcast: &'a [Message],
}

/// Master seed plus replication index; each server gets its own stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeed {
    pub streams: StreamFactory,
    pub replication: u64,
}

impl RunSeed {
    pub fn new(seed: u64, replication: u64) -> Self {
        Self {
            streams: StreamFactory::new(seed),
            replication,
        }
    }

    pub fn stream(&self, server: usize, purpose: Purpose) -> ChaCha20Rng {
        self.streams.stream(self.replication, server as u64, purpose)
    }
}

impl From<u64> for RunSeed {
    fn from(seed: u64) -> Self {
        Self::new(seed, 0)
    }
}

/// Executes `config.rounds` rounds. In each round every server runs
/// `round_fn` on its batch and the broadcast so far; the resulting messages
/// are checked and appended to the broadcast in server order.
pub fn run_rounds<F>(
    config: &FederationConfig,
    servers: &[Server],
    mode: BatchMode,
    seed: RunSeed,
    purpose: Purpose,
    round_fn: F,
) -> Result<Transcript>
where
    F: Fn(&RoundInput<'_>, &mut ChaCha20Rng) -> Result<(Payload, f64)> + Sync,
{
    if mode == BatchMode::Batched {
        config.validate_batched()?;
    } else {
        config.validate()?;
    }
    if servers.len() != config.servers.len() {
        return Err(Error::InvalidParameter(format!(
            "config lists {} servers but {} were given",
            config.servers.len(),
            servers.len()
        )));
    }
    for (spec, server) in config.servers.iter().zip(servers) {
        if spec.n != server.n() {
            return Err(Error::InvalidParameter(format!(
                "server {} holds {} records, config says {}",
                server.id,
                server.n(),
                spec.n
            )));
        }
        if server.data.dimension() != config.dimension {
            return Err(Error::DimensionMismatch {
                expected: config.dimension,
                actual: server.data.dimension(),
            });
        }
    }

    let batches: Vec<Vec<Dataset>> = servers
        .iter()
        .map(|s| match mode {
            BatchMode::Batched => s
                .batch_ranges(config.rounds)
                .into_iter()
                .map(|r| s.data.slice(r))
                .collect::<Result<Vec<_>>>(),
            BatchMode::FullData => Ok(vec![s.data.clone()]),
        })
        .collect::<Result<_>>()?;
    let guards: Vec<RecordGuard> = servers.iter().map(|s| RecordGuard::new(&s.data)).collect();
    let mut rngs: Vec<ChaCha20Rng> = servers.iter().map(|s| seed.stream(s.id, purpose)).collect();

    let mut transcript = Transcript::default();
    for k in 1..=config.rounds {
        let broadcast = transcript.messages.clone();
        let jobs: Vec<(usize, &mut ChaCha20Rng)> = rngs.iter_mut().enumerate().collect();
        let released: Vec<Result<Message>> = crate::par_map(jobs, |(s, rng)| {
            let batch = match mode {
                BatchMode::Batched => &batches[s][k - 1],
                BatchMode::FullData => &batches[s][0],
            };
            let input = RoundInput {
                round: k,
                server: servers[s].id,
                budget: servers[s].budget,
                batch,
                broadcast: &broadcast,
            };
            let (payload, sigma) = round_fn(&input, rng)?;
            let message = Message {
                round: k,
                server: servers[s].id,
                payload,
                sigma,
            };
            for g in &guards {
                g.check(&message)?;
            }
            Ok(message)
        });
        for m in released {
            transcript.messages.push(m?);
        }
    }
    Ok(transcript)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, CoxModelSpec};
    use crate::survival::SurvivalRecord;
    use rand_distr::{Distribution, StandardNormal};

    fn budget(e: f64) -> PrivacyBudget {
        PrivacyBudget::new(e, 1e-3).unwrap()
    }

    fn servers(count: usize, n: usize, seed: u64) -> Vec<Server> {
        let spec = CoxModelSpec::reference(0.3);
        let f = StreamFactory::new(seed);
        (0..count)
            .map(|s| Server::new(s, generate_dataset(&spec, n, &mut f.stream(0, s as u64, Purpose::BetaData)).unwrap(), budget(1.0)))
            .collect()
    }

    fn noisy_mean(input: &RoundInput<'_>, rng: &mut ChaCha20Rng) -> Result<(Payload, f64)> {
        let n = input.batch.len() as f64;
        let sigma = 0.1;
        let d = input.batch.dimension();
        let mean: Vec<f64> = (0..d)
            .map(|a| input.batch.records().iter().map(|r| r.covariates[a]).sum::<f64>() / n + sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        Ok((Payload::NoisedVector(mean), sigma))
    }

    #[test]
    fn weight_examples() {
        let homog = FederationConfig::homogeneous(2, 100, budget(1.0), 1, 1).unwrap();
        assert_eq!(effective_weights(&homog, WeightMode::BatchedBeta).unwrap(), vec![0.5, 0.5]);
        let pair = |e0: f64| {
            FederationConfig::new(
                vec![ServerSpec { n: 100, budget: budget(e0) }, ServerSpec { n: 100, budget: budget(10.0) }],
                1,
                1,
            )
            .unwrap()
        };
        // 100² · 0.1² = 100, so both terms saturate at b = 100.
        assert_eq!(effective_weights(&pair(0.1), WeightMode::BatchedBeta).unwrap(), vec![0.5, 0.5]);
        let w = effective_weights(&pair(0.01), WeightMode::BatchedBeta).unwrap();
        assert!((w[0] - 1.0 / 101.0).abs() < 1e-12 && (w[1] - 100.0 / 101.0).abs() < 1e-12);
        let single = FederationConfig::homogeneous(1, 10, budget(0.5), 2, 3).unwrap();
        for mode in [WeightMode::BatchedBeta, WeightMode::FullBeta, WeightMode::Hazard, WeightMode::HazardLiteral] {
            assert_eq!(effective_weights(&single, mode).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn weight_modes_differ_as_documented() {
        // n = 100, eps = 0.05, d = 4, K = 2: hazard min(100, 25), literal min(100, 6.25), batched min(50, 1.5625).
        let c = FederationConfig::new(
            vec![ServerSpec { n: 100, budget: budget(0.05) }, ServerSpec { n: 100, budget: budget(1.0) }],
            2,
            4,
        )
        .unwrap();
        let h = effective_weights(&c, WeightMode::Hazard).unwrap();
        assert!((h[0] - 25.0 / 125.0).abs() < 1e-12);
        let l = effective_weights(&c, WeightMode::HazardLiteral).unwrap();
        assert!((l[0] - 6.25 / 106.25).abs() < 1e-12);
        let b = effective_weights(&c, WeightMode::BatchedBeta).unwrap();
        assert!((b[0] - 1.5625 / 51.5625).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(FederationConfig::homogeneous(1, 10, budget(1.0), 0, 1).is_err());
        assert!(FederationConfig::homogeneous(0, 10, budget(1.0), 1, 1).is_err());
        assert!(FederationConfig::homogeneous(1, 0, budget(1.0), 1, 1).is_err());
        let c = FederationConfig::homogeneous(1, 5, budget(1.0), 10, 1).unwrap();
        assert!(matches!(c.validate_batched(), Err(Error::EmptyBatch { .. })));
    }

    #[test]
    fn batches_are_disjoint_and_equal() {
        for (n, k) in [(10, 3), (100, 7), (5, 5), (7, 1)] {
            let r = batch_ranges(n, k);
            assert_eq!(r.len(), k);
            for (i, a) in r.iter().enumerate() {
                assert_eq!(a.len(), n / k);
                for b in &r[i + 1..] {
                    assert!(a.end <= b.start);
                }
            }
        }
    }

    #[test]
    fn message_counts_and_order() {
        let srv = servers(1, 20, 1);
        let c = config_for(&srv, 1).unwrap();
        let t = run_rounds(&c, &srv, BatchMode::Batched, 9.into(), Purpose::GradientNoise, noisy_mean).unwrap();
        assert_eq!(t.len(), 1);

        let srv = servers(2, 30, 1);
        let c = config_for(&srv, 3).unwrap();
        let t = run_rounds(&c, &srv, BatchMode::Batched, 9.into(), Purpose::GradientNoise, noisy_mean).unwrap();
        assert_eq!(t.len(), 6);
        let order: Vec<(usize, usize)> = t.messages.iter().map(|m| (m.round, m.server)).collect();
        assert_eq!(order, vec![(1, 0), (1, 1), (2, 0), (2, 1), (3, 0), (3, 1)]);
        let again = run_rounds(&c, &srv, BatchMode::Batched, 9.into(), Purpose::GradientNoise, noisy_mean).unwrap();
        assert_eq!(t, again);
        t.check_isolation(&srv).unwrap();
    }

    #[test]
    fn broadcast_grows_by_round() {
        let srv = servers(3, 30, 2);
        let c = config_for(&srv, 4).unwrap();
        let t = run_rounds(&c, &srv, BatchMode::Batched, 1.into(), Purpose::GradientNoise, |input, _| {
            assert_eq!(input.broadcast.len(), 3 * (input.round - 1));
            assert_eq!(input.batch.len(), 7);
            Ok((Payload::NoisedScalar(input.broadcast.len() as f64 + 0.5), 1.0))
        })
        .unwrap();
        assert_eq!(t.len(), 12);
    }

    #[test]
    fn leaking_round_function_is_rejected() {
        let srv = servers(2, 20, 3);
        let c = config_for(&srv, 2).unwrap();
        let leak = run_rounds(&c, &srv, BatchMode::Batched, 1.into(), Purpose::GradientNoise, |input, _| {
            Ok((Payload::NoisedVector(input.batch.records()[0].covariates.clone()), 0.0))
        });
        assert!(matches!(leak, Err(Error::IsolationViolation { .. })));
        let triple = run_rounds(&c, &srv, BatchMode::FullData, 1.into(), Purpose::GradientNoise, |input, _| {
            let r: &SurvivalRecord = &input.batch.records()[3];
            let mut v = vec![0.25, r.time, if r.event { 1.0 } else { 0.0 }];
            v.extend(&r.covariates);
            Ok((Payload::NoisedTreeNodes(v), 1.0))
        });
        assert!(matches!(triple, Err(Error::IsolationViolation { .. })));
        let nan = run_rounds(&c, &srv, BatchMode::FullData, 1.into(), Purpose::GradientNoise, |_, _| {
            Ok((Payload::NoisedScalar(f64::NAN), 1.0))
        });
        assert!(nan.is_err());
    }

    #[test]
    fn jsonl_roundtrip() {
        let srv = servers(2, 12, 4);
        let c = config_for(&srv, 2).unwrap();
        let t = run_rounds(&c, &srv, BatchMode::Batched, 5.into(), Purpose::GradientNoise, noisy_mean).unwrap();
        let text = t.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "noised_vector");
        assert_eq!(first["round"], 1);
        assert!(first["payload"].is_array() && first["sigma"].is_number());
        assert_eq!(Transcript::read_jsonl(text.as_bytes()).unwrap(), t);
    }
}
