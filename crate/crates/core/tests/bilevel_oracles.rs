//! Outer-GA oracles: analytic Dirichlet–Multinomial moments, exact-rational
//! simplex sums, the planted-optimum recovery experiment and split hygiene.

use num_rational::Ratio;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vertevo::bilevel::{
    crossover_weights, eta_safe_project, evolve_weights_with, initial_population, sample_weights,
    stratified_split, LabeledScenario, OuterGaParams,
};
use vertevo::convex::{instance_from_scenario, solve_inner, InstanceOptions, IDX_G4, WEIGHT_DIM};
use vertevo::scenario::{generate_scenario, ClassSpec, ScenarioSpec, WeatherPhase};
use vertevo::SolverOptions;

#[test]
fn symmetric_draws_match_analytic_projected_mean() {
    let (kappa, m_samp, eta) = (4.0f64, 32u32, 0.05f64);
    let m = WEIGHT_DIM as f64;
    let draws = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    let mut sums = [0.0f64; WEIGHT_DIM];
    for _ in 0..draws {
        let d = sample_weights(None, kappa, m_samp, eta, &mut rng);
        assert_eq!(d.counts.iter().sum::<u32>(), m_samp);
        for (s, &a) in sums.iter_mut().zip(&d.weight.alpha) {
            *s += a;
        }
    }

    // Dirichlet(κ/M symmetric): E p_j = 1/M; with counts n ~ Mult(m, p),
    // Var(n_j/m) = E[p(1−p)]/m + Var(p) where E p² = a(a+1)/(κ(κ+1)).
    let a = kappa / m;
    let e_p2 = a * (a + 1.0) / (kappa * (kappa + 1.0));
    let var_p = e_p2 - 1.0 / (m * m);
    let var_raw = (1.0 / m - e_p2) / m_samp as f64 + var_p;
    for (j, &s) in sums.iter().enumerate() {
        let mean = s / draws as f64;
        let expected = if j == IDX_G4 { eta + (1.0 - eta) / m } else { (1.0 - eta) / m };
        let sigma = (1.0 - eta) * (var_raw / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma,
            "coordinate {j}: mean {mean} vs {expected} (3σ = {})",
            3.0 * sigma
        );
    }
}

#[test]
fn projected_draws_sum_to_one_in_exact_rationals() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let eta = Ratio::new(1i64, 20); // 0.05
    for _ in 0..2000 {
        let d = sample_weights(None, 4.0, 32, 0.05, &mut rng);
        // α_j = η[j = {4}] + (1−η) n_j / m in exact rational arithmetic
        let mut total = Ratio::new(0i64, 1);
        for (j, &c) in d.counts.iter().enumerate() {
            let raw = Ratio::new(c as i64, d.m_samp as i64);
            let term = (Ratio::new(1i64, 1) - eta) * raw
                + if j == IDX_G4 { eta } else { Ratio::new(0, 1) };
            total += term;
        }
        assert_eq!(total, Ratio::new(1, 1));
        // the float genome agrees within 1e-12 and satisfies the floor
        let sum: f64 = d.weight.alpha.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(d.weight.alpha[IDX_G4] >= 0.05 - 1e-15);
    }
}

#[test]
fn crossover_property_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..10_000 {
        let a = sample_weights(None, 3.0, 16, 0.05, &mut rng).weight;
        let b = sample_weights(None, 6.0, 64, 0.05, &mut rng).weight;
        let child = crossover_weights(&a, &b, &mut rng);
        assert!(child.validate().is_ok());
        assert!((child.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn projection_property_sweep_on_random_simplex_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    use rand::Rng;
    for _ in 0..5000 {
        let raw: Vec<f64> = {
            let xs: Vec<f64> = (0..WEIGHT_DIM).map(|_| rng.gen_range(0.0..1.0f64)).collect();
            let s: f64 = xs.iter().sum();
            xs.iter().map(|x| x / s).collect()
        };
        let w = eta_safe_project(&raw, 0.05).unwrap();
        assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-15 * 15.0);
        assert!(w.alpha[IDX_G4] >= 0.05 - 1e-15);
        assert!(w.alpha.iter().all(|&a| a >= 0.0));
    }
}

fn tiny_scenario_spec(seed: u64, adverse: bool) -> ScenarioSpec {
    ScenarioSpec {
        horizon: 600,
        seed,
        bin_width: 60,
        classes: vec![
            ClassSpec { class_id: 1, rate: 0.02, pad_count: 2, separation: 0, service_demand: 12, base_weight: 1.0 },
            ClassSpec { class_id: 2, rate: 0.008, pad_count: 1, separation: 0, service_demand: 12, base_weight: 2.0 },
        ],
        weather: if adverse {
            vec![WeatherPhase { start: 0, end: 600, weight_multiplier: 2.0 }]
        } else {
            vec![]
        },
        requests: None,
    }
}

fn planted_scenarios() -> Vec<LabeledScenario> {
    let mut out = Vec::new();
    for seed in 1..=6u64 {
        for adverse in [false, true] {
            let scenario = generate_scenario(&tiny_scenario_spec(seed * 7 + adverse as u64, adverse)).unwrap();
            if scenario.requests.is_empty() {
                continue;
            }
            out.push(LabeledScenario {
                stratum: vertevo::bilevel::stratum_label(&scenario),
                scenario,
            });
        }
    }
    out
}

fn small_params(seed: u64, generations: usize) -> OuterGaParams {
    OuterGaParams {
        pop_size: 24,
        generations,
        seed,
        ..Default::default()
    }
}

#[test]
fn zero_generations_returns_best_of_initial_population() {
    let split = stratified_split(planted_scenarios()).unwrap();
    let p = small_params(5, 0);
    let outcome = evolve_weights_with(
        &split,
        &p,
        &InstanceOptions::default(),
        &SolverOptions::default(),
    )
    .unwrap();
    // replay the initial population and verify the incumbent is its best
    let instances: Vec<_> = split
        .validation
        .iter()
        .filter_map(|ls| instance_from_scenario::<f64>(&ls.scenario, &InstanceOptions::default()).ok())
        .collect();
    let opts = SolverOptions::default();
    let mut best = f64::INFINITY;
    for genome in initial_population(&p) {
        let mean: f64 = instances
            .iter()
            .map(|inst| {
                let sol = solve_inner(&genome, inst, &opts, None).unwrap();
                sol.z.iter().sum::<f64>() / sol.z.len() as f64
            })
            .sum::<f64>()
            / instances.len() as f64;
        best = best.min(mean);
    }
    assert!((outcome.report.validation_fitness.t_wait - best).abs() < 1e-9);
    assert_eq!(outcome.report.trace.len(), 1);
}

#[test]
fn elitism_keeps_best_validation_fitness_non_increasing() {
    let split = stratified_split(planted_scenarios()).unwrap();
    let p = small_params(3, 12);
    let outcome = evolve_weights_with(
        &split,
        &p,
        &InstanceOptions::default(),
        &SolverOptions::default(),
    )
    .unwrap();
    let best_series: Vec<f64> = outcome
        .report
        .trace
        .iter()
        .map(|r| r.best_t_wait)
        .collect();
    for w in best_series.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "best fitness regressed: {w:?}");
    }
}

#[test]
fn test_split_unread_until_report() {
    let split = stratified_split(planted_scenarios()).unwrap();
    assert_eq!(split.test.times_evaluated(), 0);
    let outcome = evolve_weights_with(
        &split,
        &small_params(1, 4),
        &InstanceOptions::default(),
        &SolverOptions::default(),
    )
    .unwrap();
    assert_eq!(outcome.report.test_evaluations_before_report, 0);
    assert!(split.test.times_evaluated() > 0);
    assert!(!outcome.report.test_panels.is_empty());
    for panel in &outcome.report.test_panels {
        assert!(panel.scenario_count > 0);
        assert!(panel.t_wait.is_finite());
        assert!(panel.throughput > 0.0);
    }
}

/// On these instances the responsiveness atoms (mean and smoothed tail,
/// which share the mean's uniform pull at clustered optima) strictly beat
/// the dispersion- and utilization-only subsets, so evolution should pile
/// weight mass onto subsets containing atom 1 or atom 3.
#[test]
fn planted_optimum_recovers_responsiveness_mass() {
    let split = stratified_split(planted_scenarios()).unwrap();
    let mut averaged = 0.0;
    let mut fitnesses = Vec::new();
    let seeds = [11u64, 22, 33];
    for &seed in &seeds {
        let p = OuterGaParams {
            pop_size: 24,
            generations: 60,
            seed,
            ..Default::default()
        };
        let outcome = evolve_weights_with(
            &split,
            &p,
            &InstanceOptions::default(),
            &SolverOptions::default(),
        )
        .unwrap();
        let mass: f64 = outcome
            .best
            .alpha
            .iter()
            .enumerate()
            .filter(|(j, _)| (j + 1) & 0b101 != 0) // subsets with atom 1 or 3
            .map(|(_, &a)| a)
            .sum();
        averaged += mass;
        fitnesses.push(outcome.report.validation_fitness.t_wait);
    }
    averaged /= seeds.len() as f64;
    assert!(
        averaged >= 0.5,
        "seed-averaged mass on responsiveness subsets: {averaged}"
    );

    // and the evolved genomes reach the planted optimum's fitness level:
    // within 5% of the concentrated mean-atom genome
    let instances: Vec<_> = split
        .validation
        .iter()
        .filter_map(|ls| instance_from_scenario::<f64>(&ls.scenario, &InstanceOptions::default()).ok())
        .collect();
    let opts = SolverOptions::default();
    let planted = vertevo::convex::WeightVector::concentrated(0, 0.05);
    let planted_fit: f64 = instances
        .iter()
        .map(|inst| {
            let sol = solve_inner(&planted, inst, &opts, None).unwrap();
            sol.z.iter().sum::<f64>() / sol.z.len() as f64
        })
        .sum::<f64>()
        / instances.len() as f64;
    for f in fitnesses {
        assert!(f <= planted_fit * 1.05, "evolved {f} vs planted {planted_fit}");
    }
}
