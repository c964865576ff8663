mod common;

use common::{random_dataset, random_in_ball};
use fdp_cox::breslow::{
    breslow_increments, build_private_tree, estimate_at_risk_probability, query_hazard, HazardEstimate, HazardParams,
    HazardTree,
};
use fdp_cox::datagen::{generate_dataset, sample_record, CoxModelSpec};
use fdp_cox::federation::Server;
use fdp_cox::rng::{Purpose, StreamFactory};
use fdp_cox::survival::{Dataset, SurvivalRecord};
use fdp_cox::PrivacyBudget;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn zero_noise_tree(data: &Dataset, beta: &[f64], p_hat: f64, h: usize) -> HazardTree {
    let params = HazardParams::new(beta.to_vec(), p_hat, 1.0).with_noise_multiplier(0.0);
    let budget = PrivacyBudget::new(1.0, 1e-3).unwrap();
    build_private_tree(0, data, &budget, &params, h, &mut ChaCha20Rng::seed_from_u64(0)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 100,
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn zero_noise_tree_is_exact(seed in any::<u64>(), n in 1usize..=200, d in 1usize..=4, h in 1usize..=8, p in 0.05f64..1.0) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data = random_dataset(&mut rng, n, d, 0.2);
        let beta = random_in_ball(&mut rng, d, 1.0);
        let tree = zero_noise_tree(&data, &beta, p, h);
        prop_assert_eq!(tree.node_count(), (1 << (h + 1)) - 2);
        for l in 1..h {
            for m in 1..=(1 << l) {
                prop_assert_eq!(tree.node(l, m), tree.node(l + 1, 2 * m - 1) + tree.node(l + 1, 2 * m));
            }
        }
        let estimate = HazardEstimate::new(vec![tree.clone()], vec![1.0]).unwrap();
        let mut prefix = 0.0;
        let mut last = 0.0;
        for m in 0..=(1usize << h) {
            let t = m as f64 / (1u64 << h) as f64;
            let q = query_hazard(&estimate, t);
            prop_assert!((q - prefix).abs() <= 1e-12, "t = {t}: {q} vs {prefix}");
            prop_assert!(q >= last - 1e-15);
            last = q;
            if m < 1 << h {
                prefix += tree.leaves()[m];
            }
        }
    }
}

#[test]
fn nelson_aalen_equivalence() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(1..=200);
        let mut slots: Vec<usize> = (0..256).collect();
        let records: Vec<SurvivalRecord> = (0..n)
            .map(|_| {
                let k = slots.swap_remove(rng.gen_range(0..slots.len()));
                SurvivalRecord::new((k as f64 + 0.5) / 256.0, rng.gen_bool(0.6), random_in_ball(&mut rng, 2, 1.0)).unwrap()
            })
            .collect();
        let data = Dataset::new(2, records).unwrap();
        let tree = zero_noise_tree(&data, &[0.0, 0.0], 0.5 / n as f64, 8);
        let estimate = HazardEstimate::new(vec![tree], vec![1.0]).unwrap();
        for m in 0..=256 {
            let t = m as f64 / 256.0;
            let nelson_aalen: f64 = data
                .records()
                .iter()
                .filter(|r| r.event && r.time <= t)
                .map(|r| 1.0 / data.records().iter().filter(|o| o.time >= r.time).count() as f64)
                .sum();
            assert!((query_hazard(&estimate, t) - nelson_aalen).abs() <= 1e-12);
        }
    }
}

#[test]
fn per_level_sensitivity_certificate() {
    let n = 50;
    let h = 4;
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let data = random_dataset(&mut rng, n, 3, 0.2);
        let beta = random_in_ball(&mut rng, 3, 1.0);
        let p_hat = rng.gen_range(0.05..1.0);
        let c = 0.9 * (-fdp_cox::survival::norm(&beta)).exp() * p_hat;
        let mut records = data.records().to_vec();
        let i = rng.gen_range(0..n);
        records[i] = random_dataset(&mut rng, 1, 3, 0.2).into_records().remove(0);
        let neighbour = Dataset::new(3, records).unwrap();
        let a = HazardTree::from_leaves(0, breslow_increments(&data, &beta, c, h).unwrap()).unwrap();
        let b = HazardTree::from_leaves(0, breslow_increments(&neighbour, &beta, c, h).unwrap()).unwrap();
        let cn = c * n as f64;
        let bound = (n * n) as f64 / cn.powi(4) + 3.0 / (cn * cn);
        for l in 1..=h {
            let sq: f64 = (1..=(1 << l)).map(|m| (a.node(l, m) - b.node(l, m)).powi(2)).sum();
            assert!(sq <= bound, "level {l}: {sq} > {bound}");
        }
    }
}

#[test]
fn at_risk_probability_without_noise() {
    let spec = CoxModelSpec::reference(0.3);
    let data = generate_dataset(&spec, 100_000, &mut StreamFactory::new(8).stream(0, 0, Purpose::AtRiskData)).unwrap();
    let servers = [Server::new(0, data, PrivacyBudget::new(1.0, 1e-3).unwrap())];
    let p = estimate_at_risk_probability(&servers, 0.0, 1.into()).unwrap().p_hat;
    assert!((p - 0.273).abs() <= 0.01, "{p}");
}

#[test]
fn generated_records_are_reproducible() {
    let spec = CoxModelSpec::reference(0.9);
    let draw = || {
        let mut rng = StreamFactory::new(4).stream(2, 1, Purpose::HazardData);
        (0..500).map(|_| sample_record(&spec, &mut rng).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(draw(), draw());
}
