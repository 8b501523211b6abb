//! Outer GA over cost-weight genomes.
//!
//! Genomes are η-floored simplex weight vectors sampled by a
//! Dirichlet–Multinomial scheme: draw `p ~ Dirichlet(a)` with `a_j = κ/15`
//! (symmetric start) or `a_j = κ α_j^parent` (local exploration), sample
//! counts `n ~ Multinomial(m_samp, p)`, set raw weights `n_j / m_samp` and
//! apply the η-safe projection `α = η e_{4} + (1−η) α̃`. Fitness is the
//! out-of-sample mean wait at the inner optimum, averaged over validation
//! scenarios, with lexicographic tie-breaks by dispersion, tail and
//! utilization penalty. The test split is sealed behind [`TestScenarios`]:
//! the GA loop has no way to read it, and the evaluation counter lets
//! callers assert it stayed unread until the final report.

use std::cell::Cell;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::convex::{
    instance_from_scenario, solve_inner, InstanceOptions, IDX_G4, WEIGHT_DIM,
};
use crate::cvar;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::{RelaxedInstance, SolverOptions, WeightVector};

/// Fitness ties closer than this are broken lexicographically.
pub const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterGaParams {
    pub pop_size: usize,
    pub generations: usize,
    pub tournament_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Dirichlet concentration κ.
    pub kappa: f64,
    /// Multinomial sample size; the raw genome is counts / m_samp.
    pub m_samp: u32,
    pub elite: usize,
    /// Floor on the strongly convex atom's weight.
    pub eta: f64,
    pub seed: u64,
}

impl Default for OuterGaParams {
    fn default() -> Self {
        OuterGaParams {
            pop_size: 60,
            generations: 80,
            tournament_size: 3,
            crossover_prob: 0.8,
            mutation_prob: 0.2,
            kappa: 4.0,
            m_samp: 32,
            elite: 1,
            eta: 0.05,
            seed: 0,
        }
    }
}

impl OuterGaParams {
    /// Hard validation plus warnings when a control leaves its usual range.
    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 {
            return Err(Error::validation("pop_size", "must be at least 2"));
        }
        if self.elite >= self.pop_size {
            return Err(Error::validation("elite", "must be below pop_size"));
        }
        if self.tournament_size == 0 {
            return Err(Error::validation("tournament_size", "must be positive"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::validation("eta", "must lie strictly inside (0, 1)"));
        }
        if self.kappa <= 0.0 || !self.kappa.is_finite() {
            return Err(Error::validation("kappa", "must be positive"));
        }
        if self.m_samp == 0 {
            return Err(Error::validation("m_samp", "must be at least 1"));
        }
        for (name, p) in [("crossover_prob", self.crossover_prob), ("mutation_prob", self.mutation_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(name, "must lie in [0, 1]"));
            }
        }
        if ![40, 60, 80].contains(&self.pop_size) {
            log::warn!("pop_size {} outside the usual {{40, 60, 80}}", self.pop_size);
        }
        if !(60..=120).contains(&self.generations) {
            log::warn!("generations {} outside the usual [60, 120]", self.generations);
        }
        if ![2, 3].contains(&self.tournament_size) {
            log::warn!("tournament_size {} outside the usual {{2, 3}}", self.tournament_size);
        }
        if !(0.7..=0.9).contains(&self.crossover_prob) {
            log::warn!("crossover_prob {} outside the usual [0.7, 0.9]", self.crossover_prob);
        }
        if !(0.1..=0.3).contains(&self.mutation_prob) {
            log::warn!("mutation_prob {} outside the usual [0.1, 0.3]", self.mutation_prob);
        }
        if !(1.0..=10.0).contains(&self.kappa) {
            log::warn!("kappa {} outside the usual [1, 10]", self.kappa);
        }
        if ![16, 32, 64].contains(&self.m_samp) {
            log::warn!("m_samp {} outside the usual {{16, 32, 64}}", self.m_samp);
        }
        if ![1, 2].contains(&self.elite) {
            log::warn!("elite {} outside the usual {{1, 2}}", self.elite);
        }
        Ok(())
    }
}

/// A Dirichlet–Multinomial draw: exact integer counts plus the projected
/// genome. Counts sum to `m_samp` exactly, which makes the simplex sum
/// verifiable in rational arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightDraw {
    pub counts: [u32; WEIGHT_DIM],
    pub m_samp: u32,
    pub weight: WeightVector,
}

/// Exact affine η-safe projection `α = η e_{4} + (1−η) α̃` of a raw simplex
/// vector. Raw vectors off the simplex by more than 1e-9 are rejected.
pub fn eta_safe_project(raw: &[f64], eta: f64) -> Result<WeightVector> {
    if raw.len() != WEIGHT_DIM {
        return Err(Error::validation("raw", format!("must have {WEIGHT_DIM} components")));
    }
    if raw.iter().any(|x| *x < -1e-12 || !x.is_finite()) {
        return Err(Error::validation("raw", "components must be nonnegative"));
    }
    let sum: f64 = raw.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation("raw", format!("must lie on the simplex, sum {sum}")));
    }
    let mut alpha: Vec<f64> = raw.iter().map(|&x| (1.0 - eta) * x.max(0.0)).collect();
    alpha[IDX_G4] += eta;
    // remove float dirt from slightly off-simplex inputs
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > 1e-13 {
        for a in &mut alpha {
            *a /= total;
        }
    }
    WeightVector::new(alpha, eta)
}

/// Draws a genome around `parent` (or from the symmetric prior when absent).
pub fn sample_weights(
    parent: Option<&WeightVector>,
    kappa: f64,
    m_samp: u32,
    eta: f64,
    rng: &mut ChaCha8Rng,
) -> WeightDraw {
    let shapes: Vec<f64> = match parent {
        Some(p) => p.alpha.iter().map(|&a| kappa * a).collect(),
        None => vec![kappa / WEIGHT_DIM as f64; WEIGHT_DIM],
    };
    // Dirichlet via normalized Gamma draws; zero shapes carry zero mass
    let mut p = [0.0f64; WEIGHT_DIM];
    let mut total = 0.0;
    for (j, &shape) in shapes.iter().enumerate() {
        if shape > 0.0 {
            let g = Gamma::new(shape, 1.0).expect("positive shape");
            p[j] = g.sample(rng);
            total += p[j];
        }
    }
    if total <= 0.0 {
        p = [1.0 / WEIGHT_DIM as f64; WEIGHT_DIM];
    } else {
        for x in &mut p {
            *x /= total;
        }
    }

    let mut counts = [0u32; WEIGHT_DIM];
    for _ in 0..m_samp {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = WEIGHT_DIM - 1;
        for (j, &pj) in p.iter().enumerate() {
            acc += pj;
            if u < acc {
                chosen = j;
                break;
            }
        }
        counts[chosen] += 1;
    }

    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / m_samp as f64).collect();
    let weight = eta_safe_project(&raw, eta).expect("counts lie on the simplex");
    WeightDraw {
        counts,
        m_samp,
        weight,
    }
}

/// Uniform arithmetic crossover `λ a + (1−λ) b`. Any convex combination of
/// valid genomes already satisfies the η floor, so the projection only
/// fires as a numerical safety net.
pub fn crossover_weights(a: &WeightVector, b: &WeightVector, rng: &mut ChaCha8Rng) -> WeightVector {
    let lambda: f64 = rng.gen();
    // written as y + λ(x − y) so identical parents blend to themselves exactly
    let alpha: Vec<f64> = a
        .alpha
        .iter()
        .zip(&b.alpha)
        .map(|(&x, &y)| y + lambda * (x - y))
        .collect();
    let eta = a.eta;
    if alpha[IDX_G4] < eta {
        let sum: f64 = alpha.iter().sum();
        let raw: Vec<f64> = alpha.iter().map(|x| x / sum).collect();
        return eta_safe_project(&raw, eta).expect("blend is near-simplex");
    }
    WeightVector { alpha, eta }
}

/// A scenario with its stratification label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScenario {
    pub scenario: Scenario,
    pub stratum: String,
}

/// Default stratum label: dominant UAV class plus weather condition.
pub fn stratum_label(scenario: &Scenario) -> String {
    let mut counts = std::collections::BTreeMap::new();
    for r in &scenario.requests {
        *counts.entry(r.class_id).or_insert(0usize) += 1;
    }
    let dominant = counts
        .iter()
        .max_by_key(|(id, n)| (**n, std::cmp::Reverse(**id)))
        .map(|(id, _)| *id)
        .unwrap_or(0);
    let adverse = scenario.weather.iter().any(|p| p.weight_multiplier != 1.0);
    format!("c{dominant}-{}", if adverse { "adverse" } else { "calm" })
}

/// Test scenarios sealed behind an evaluation counter; the outer GA cannot
/// read them, and reporting is the only accessor.
#[derive(Debug)]
pub struct TestScenarios {
    scenarios: Vec<LabeledScenario>,
    evaluations: Cell<usize>,
}

impl TestScenarios {
    pub fn new(scenarios: Vec<LabeledScenario>) -> Self {
        TestScenarios {
            scenarios,
            evaluations: Cell::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// How many test-scenario inner solves have happened.
    pub fn times_evaluated(&self) -> usize {
        self.evaluations.get()
    }

    /// Per-condition panels of the incumbent on the test split. This is the
    /// only way test scores can be computed.
    pub fn evaluate_panels(
        &self,
        alpha: &WeightVector,
        instance_options: &InstanceOptions<f64>,
        solver: &SolverOptions,
    ) -> Result<Vec<ConditionPanel>> {
        let mut by_stratum: std::collections::BTreeMap<String, Vec<&LabeledScenario>> =
            std::collections::BTreeMap::new();
        for ls in &self.scenarios {
            by_stratum.entry(ls.stratum.clone()).or_default().push(ls);
        }
        let mut panels = Vec::new();
        for (stratum, members) in by_stratum {
            let mut t_wait = 0.0;
            let mut sigma = 0.0;
            let mut tail = 0.0;
            let mut throughput = 0.0;
            let mut used = 0usize;
            for ls in members {
                let inst = match instance_from_scenario::<f64>(&ls.scenario, instance_options) {
                    Ok(i) => i,
                    Err(e) => {
                        log::warn!("test scenario (seed {}) excluded: {e}", ls.scenario.seed);
                        continue;
                    }
                };
                self.evaluations.set(self.evaluations.get() + 1);
                let sol = solve_inner(alpha, &inst, solver, None)?;
                let stats = wait_stats(&sol.z);
                t_wait += stats.0;
                sigma += stats.1;
                tail += stats.2;
                throughput +=
                    ls.scenario.requests.len() as f64 * 3600.0 / ls.scenario.horizon as f64;
                used += 1;
            }
            if used == 0 {
                continue;
            }
            let n = used as f64;
            panels.push(ConditionPanel {
                stratum,
                scenario_count: used,
                t_wait: t_wait / n,
                sigma_t: sigma / n,
                tail_95: tail / n,
                throughput: throughput / n,
            });
        }
        Ok(panels)
    }
}

/// Disjoint stratified train/validation/test scenario sets.
#[derive(Debug)]
pub struct DataSplit {
    pub train: Vec<LabeledScenario>,
    pub validation: Vec<LabeledScenario>,
    pub test: TestScenarios,
}

/// Round-robin stratified split; every stratum needs at least three
/// scenarios so each split sees it.
pub fn stratified_split(mut scenarios: Vec<LabeledScenario>) -> Result<DataSplit> {
    if scenarios.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 scenarios for a split, got {}",
            scenarios.len()
        )));
    }
    scenarios.sort_by(|a, b| a.stratum.cmp(&b.stratum).then(a.scenario.seed.cmp(&b.scenario.seed)));
    let mut groups: std::collections::BTreeMap<String, Vec<LabeledScenario>> =
        std::collections::BTreeMap::new();
    for ls in scenarios {
        groups.entry(ls.stratum.clone()).or_default().push(ls);
    }
    let mut train = Vec::new();
    let mut validation = Vec::new();
    let mut test = Vec::new();
    for (stratum, members) in groups {
        if members.len() < 3 {
            return Err(Error::Argument(format!(
                "stratum `{stratum}` has {} scenario(s); every stratum needs at least 3",
                members.len()
            )));
        }
        for (i, ls) in members.into_iter().enumerate() {
            match i % 3 {
                0 => train.push(ls),
                1 => validation.push(ls),
                _ => test.push(ls),
            }
        }
    }
    Ok(DataSplit {
        train,
        validation,
        test: TestScenarios::new(test),
    })
}

/// Genome fitness: out-of-sample mean wait, then dispersion, tail and
/// penalty as lexicographic tie-breaks (ties at 1e-9).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitValue {
    pub t_wait: f64,
    pub sigma_t: f64,
    pub tail_95: f64,
    pub penalty: f64,
}

impl FitValue {
    pub const WORST: FitValue = FitValue {
        t_wait: f64::INFINITY,
        sigma_t: f64::INFINITY,
        tail_95: f64::INFINITY,
        penalty: f64::INFINITY,
    };

    pub fn lex_cmp(&self, other: &FitValue) -> std::cmp::Ordering {
        for (a, b) in [
            (self.t_wait, other.t_wait),
            (self.sigma_t, other.sigma_t),
            (self.tail_95, other.tail_95),
            (self.penalty, other.penalty),
        ] {
            if (a - b).abs() > TIE_TOLERANCE {
                return a.partial_cmp(&b).expect("finite or infinite fitness");
            }
        }
        std::cmp::Ordering::Equal
    }
}

fn wait_stats(z: &[f64]) -> (f64, f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let tail = cvar::cvar_sorted_tail(z, 0.95);
    (mean, var.sqrt(), tail)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionPanel {
    pub stratum: String,
    pub scenario_count: usize,
    pub t_wait: f64,
    pub sigma_t: f64,
    pub tail_95: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterTraceRow {
    pub generation: usize,
    pub best_t_wait: f64,
    pub mean_t_wait: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BilevelReport {
    pub best_alpha: Vec<f64>,
    pub eta: f64,
    pub validation_fitness: FitValue,
    pub trace: Vec<OuterTraceRow>,
    pub test_panels: Vec<ConditionPanel>,
    /// Validation scenarios excluded as infeasible.
    pub excluded_validation: usize,
    /// Test-split inner solves that happened before the report step;
    /// always zero, recorded as evidence.
    pub test_evaluations_before_report: usize,
}

#[derive(Debug)]
pub struct BilevelOutcome {
    pub best: WeightVector,
    pub report: BilevelReport,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Fixed-order RNG stream per (generation, slot) so results do not depend
/// on evaluation order.
fn stream_rng(seed: u64, generation: u64, slot: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(generation.wrapping_mul(0x10000).wrapping_add(slot))))
}

/// Deterministic initial population for the given params; exposed so test
/// oracles can replay it.
pub fn initial_population(p: &OuterGaParams) -> Vec<WeightVector> {
    (0..p.pop_size)
        .map(|k| {
            let mut rng = stream_rng(p.seed, 0, k as u64);
            sample_weights(None, p.kappa, p.m_samp, p.eta, &mut rng).weight
        })
        .collect()
}

fn evaluate_genome(
    alpha: &WeightVector,
    instances: &[RelaxedInstance],
    solver: &SolverOptions,
) -> FitValue {
    let mut acc = FitValue {
        t_wait: 0.0,
        sigma_t: 0.0,
        tail_95: 0.0,
        penalty: 0.0,
    };
    let mut used = 0usize;
    for inst in instances {
        match solve_inner(alpha, inst, solver, None) {
            Ok(sol) => {
                let (mean, sigma, tail) = wait_stats(&sol.z);
                let penalty = crate::convex::atoms(&sol.z, inst)
                    .map(|ev| ev.values[3])
                    .unwrap_or(f64::INFINITY);
                acc.t_wait += mean;
                acc.sigma_t += sigma;
                acc.tail_95 += tail;
                acc.penalty += penalty;
                used += 1;
            }
            Err(e) => {
                log::warn!("inner solve failed for a genome: {e}");
                return FitValue::WORST;
            }
        }
    }
    if used == 0 {
        return FitValue::WORST;
    }
    let n = used as f64;
    FitValue {
        t_wait: acc.t_wait / n,
        sigma_t: acc.sigma_t / n,
        tail_95: acc.tail_95 / n,
        penalty: acc.penalty / n,
    }
}

/// Runs the outer GA. Only validation scores drive the ranking; the test
/// split is touched once, by the final report.
pub fn evolve_weights(splits: &DataSplit, p: &OuterGaParams) -> Result<BilevelOutcome> {
    evolve_weights_with(
        splits,
        p,
        &InstanceOptions::default(),
        &SolverOptions::default(),
    )
}

pub fn evolve_weights_with(
    splits: &DataSplit,
    p: &OuterGaParams,
    instance_options: &InstanceOptions<f64>,
    solver: &SolverOptions,
) -> Result<BilevelOutcome> {
    p.validate()?;
    let mut excluded = 0usize;
    let mut instances: Vec<RelaxedInstance> = Vec::new();
    for ls in &splits.validation {
        match instance_from_scenario::<f64>(&ls.scenario, instance_options) {
            Ok(inst) => instances.push(inst),
            Err(e) => {
                excluded += 1;
                log::warn!("validation scenario (seed {}) excluded: {e}", ls.scenario.seed);
            }
        }
    }
    if instances.is_empty() {
        return Err(Error::Infeasible("every validation scenario was excluded".into()));
    }

    let mut population = initial_population(p);
    let mut fitness: Vec<FitValue> = population
        .iter()
        .map(|a| evaluate_genome(a, &instances, solver))
        .collect();

    let rank = |fitness: &[FitValue]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..fitness.len()).collect();
        idx.sort_by(|&a, &b| fitness[a].lex_cmp(&fitness[b]).then(a.cmp(&b)));
        idx
    };

    let mut ranked = rank(&fitness);
    let mut best = population[ranked[0]].clone();
    let mut best_fit = fitness[ranked[0]];
    let mut trace = vec![trace_row(0, &fitness)];

    for gen in 1..=p.generations {
        let mut next: Vec<WeightVector> = ranked[..p.elite]
            .iter()
            .map(|&i| population[i].clone())
            .collect();
        for slot in p.elite..p.pop_size {
            let mut rng = stream_rng(p.seed, gen as u64, slot as u64);
            let a = tournament(&fitness, p.tournament_size, &mut rng);
            let b = tournament(&fitness, p.tournament_size, &mut rng);
            let mut child = if rng.gen::<f64>() < p.crossover_prob {
                crossover_weights(&population[a], &population[b], &mut rng)
            } else {
                population[a].clone()
            };
            if rng.gen::<f64>() < p.mutation_prob {
                child = sample_weights(Some(&child), p.kappa, p.m_samp, p.eta, &mut rng).weight;
            }
            next.push(child);
        }
        population = next;
        fitness = population
            .iter()
            .map(|a| evaluate_genome(a, &instances, solver))
            .collect();
        ranked = rank(&fitness);
        if fitness[ranked[0]].lex_cmp(&best_fit) == std::cmp::Ordering::Less {
            best = population[ranked[0]].clone();
            best_fit = fitness[ranked[0]];
        }
        trace.push(trace_row(gen, &fitness));
    }

    let before_report = splits.test.times_evaluated();
    let test_panels = splits
        .test
        .evaluate_panels(&best, instance_options, solver)?;

    Ok(BilevelOutcome {
        report: BilevelReport {
            best_alpha: best.alpha.clone(),
            eta: best.eta,
            validation_fitness: best_fit,
            trace,
            test_panels,
            excluded_validation: excluded,
            test_evaluations_before_report: before_report,
        },
        best,
    })
}

fn trace_row(generation: usize, fitness: &[FitValue]) -> OuterTraceRow {
    let finite: Vec<f64> = fitness.iter().map(|f| f.t_wait).filter(|x| x.is_finite()).collect();
    let best = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    OuterTraceRow {
        generation,
        best_t_wait: best,
        mean_t_wait: mean,
    }
}

fn tournament(fitness: &[FitValue], size: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut winner = rng.gen_range(0..fitness.len());
    for _ in 1..size {
        let challenger = rng.gen_range(0..fitness.len());
        if fitness[challenger].lex_cmp(&fitness[winner]) == std::cmp::Ordering::Less {
            winner = challenger;
        }
    }
    winner
}
