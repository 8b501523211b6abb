//! Permutation-GA oracles: exhaustive decode timing, brute-force minima and
//! scale invariance of the argmin set.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vertevo::ga::{decode, ga_optimize, schedule_cost, Chromosome, CostWeights, GaParams, Variant};
use vertevo::scenario::{generate_scenario, ClassSpec, PriorityTag, Scenario, ScenarioSpec, UavRequest};

fn random_instance(rng: &mut ChaCha8Rng, n: usize, pad_count: u32) -> Scenario {
    let spec = ScenarioSpec {
        horizon: 10_000,
        seed: 0,
        bin_width: 60,
        classes: vec![ClassSpec {
            class_id: 1,
            rate: 0.0,
            pad_count,
            separation: rng.gen_range(0..20),
            service_demand: 30,
            base_weight: 1.0,
        }],
        weather: vec![],
        requests: Some(
            (0..n)
                .map(|i| UavRequest {
                    id: i as u32,
                    class_id: 1,
                    release_time: rng.gen_range(0..150),
                    service_demand: rng.gen_range(10..80),
                    priority_tag: PriorityTag::Normal,
                })
                .collect(),
        ),
    };
    generate_scenario(&spec).unwrap()
}

/// Exhaustive timing oracle: tries every pad-assignment vector, keeps the
/// ones consistent with the earliest-free / lowest-index selection rule at
/// every step, and recomputes the waits independently.
fn exhaustive_decode_oracle(chromosome: &Chromosome, scenario: &Scenario) -> Vec<u64> {
    let class = &scenario.classes[0];
    let pads = class.pad_count as usize;
    let n = scenario.requests.len();
    let index_of: std::collections::HashMap<u32, usize> = scenario
        .requests
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id, i))
        .collect();

    let mut consistent: Vec<Vec<u64>> = Vec::new();
    let total = pads.pow(n as u32);
    'outer: for code in 0..total {
        let mut c = code;
        let mut free = vec![0u64; pads];
        let mut waits = vec![0u64; n];
        for &id in &chromosome.order {
            let choice = c % pads;
            c /= pads;
            let req = &scenario.requests[index_of[&id]];
            // the greedy rule picks the earliest-free pad, lowest index first
            let greedy = (0..pads).min_by_key(|&p| (free[p], p)).unwrap();
            if choice != greedy {
                continue 'outer;
            }
            let start = free[choice].max(req.release_time);
            waits[index_of[&id]] = start - req.release_time;
            free[choice] = start + req.service_demand + class.separation;
        }
        consistent.push(waits);
    }
    assert_eq!(consistent.len(), 1, "exactly one assignment matches the rule");
    consistent.pop().unwrap()
}

#[test]
fn decode_matches_exhaustive_timing_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..40 {
        let n = rng.gen_range(2..=6);
        let pads = rng.gen_range(1..=3);
        let scenario = random_instance(&mut rng, n, pads);
        let mut order: Vec<u32> = (0..n as u32).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let chromosome = Chromosome { order };
        let (_, waits) = decode(&chromosome, &scenario);
        let oracle = exhaustive_decode_oracle(&chromosome, &scenario);
        assert_eq!(waits.waits, oracle, "case {case} diverged");
    }
}

fn all_permutation_costs(scenario: &Scenario, w: &CostWeights) -> Vec<(Vec<u32>, f64)> {
    let ids: Vec<u32> = scenario.requests.iter().map(|r| r.id).collect();
    let mut out = Vec::new();
    permute(&mut ids.clone(), 0, &mut |perm| {
        let chromosome = Chromosome { order: perm.to_vec() };
        let (schedule, waits) = decode(&chromosome, scenario);
        out.push((perm.to_vec(), schedule_cost(&waits, &schedule, scenario, w)));
    });
    out
}

fn permute(items: &mut Vec<u32>, k: usize, visit: &mut impl FnMut(&[u32])) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

#[test]
fn ga_finds_exhaustive_minimum_on_20_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let variants = [Variant::V1, Variant::V4, Variant::V5];
    for case in 0..20 {
        let n = rng.gen_range(4..=8);
        let pads = rng.gen_range(1..=2);
        let scenario = random_instance(&mut rng, n, pads);
        let w = CostWeights::for_variant(variants[case % variants.len()]);
        let exact = all_permutation_costs(&scenario, &w)
            .into_iter()
            .map(|(_, c)| c)
            .fold(f64::INFINITY, f64::min);
        let p = GaParams {
            pop_size: 64,
            generations: 300,
            mutation_prob: 0.35,
            seed: 1000 + case as u64,
            ..Default::default()
        };
        let out = ga_optimize(&scenario, &w, &p).unwrap();
        assert_eq!(
            out.best_cost, exact,
            "case {case} (n={n}, pads={pads}): GA {} vs exhaustive {exact}",
            out.best_cost
        );
    }
}

#[test]
fn argmin_set_invariant_under_positive_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..5 {
        let n = rng.gen_range(3..=5);
        let scenario = random_instance(&mut rng, n, 1);
        // the pure statistical form scales linearly in the weights
        let w = CostWeights::for_variant(Variant::V5);
        let mut scaled = w;
        scaled.alpha1 *= 37.5;
        scaled.alpha2 *= 37.5;
        scaled.alpha3 *= 37.5;

        let argmin_set = |w: &CostWeights| -> Vec<Vec<u32>> {
            let costs = all_permutation_costs(&scenario, w);
            let min = costs.iter().map(|(_, c)| *c).fold(f64::INFINITY, f64::min);
            costs
                .into_iter()
                .filter(|(_, c)| (c - min).abs() <= 1e-9 * min.max(1.0))
                .map(|(p, _)| p)
                .collect()
        };
        assert_eq!(argmin_set(&w), argmin_set(&scaled), "case {case}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// GA offspring remain bijections over the request ids for arbitrary
    /// sizes and seeds.
    #[test]
    fn evolved_best_is_always_a_valid_permutation(n in 2usize..12, seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scenario = random_instance(&mut rng, n, 2);
        let p = GaParams {
            pop_size: 8,
            generations: 5,
            seed,
            ..Default::default()
        };
        let out = ga_optimize(&scenario, &CostWeights::for_variant(Variant::V5), &p).unwrap();
        prop_assert!(out.best.is_valid(&scenario));
        prop_assert!(out.schedule.respects_pad_exclusivity(&scenario));
    }
}
