//! Prompt evolution under KU/KI keyword constraints.
//!
//! Prompts are lowercase token lists scored by a pluggable worker; fitness
//! subtracts token cost, a soft diversity hinge against the population and
//! an explainability term (the fraction of tokens traceable to neither KU
//! nor KI). Generations recombine contiguous token segments of top-ranked
//! parents, mutate under KU/KI constraints, and admit candidates in fitness
//! order subject to a hard pairwise cosine bound below the diversity margin.
//! KU/KI sets are recomputed every generation from the top and bottom
//! fitness quartiles via add-one smoothed log-odds.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Embedding dimension of the hashed bag-of-tokens vectors.
pub const EMBED_DIM: usize = 256;

/// Mock-worker scores at or below this value count as noise.
pub const NOISE_FLOOR: f64 = 0.01;

/// Stable short hex id for a piece of text.
pub fn stable_text_id(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<String>,
    pub id: String,
}

impl Prompt {
    /// Splits on whitespace, trims and lowercases. Empty prompts are invalid.
    pub fn parse(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text
            .split_whitespace()
            .map(|t| t.trim().to_lowercase())
            .filter(|t| !t.is_empty())
            .collect();
        Prompt::from_tokens(tokens)
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::validation("prompt", "prompt must contain at least one token"));
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.trim().to_lowercase()).collect();
        if tokens.iter().any(String::is_empty) {
            return Err(Error::validation("prompt", "tokens must be nonempty"));
        }
        let id = stable_text_id(&tokens.join(" "));
        Ok(Prompt { tokens, id })
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn token_set(&self) -> HashSet<&str> {
        self.tokens.iter().map(String::as_str).collect()
    }
}

/// Hash slot and sign a token contributes to the embedding.
pub fn token_index_sign(token: &str) -> (usize, f64) {
    let digest = Sha256::digest(token.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let idx = (u64::from_le_bytes(bytes) % EMBED_DIM as u64) as usize;
    let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
    (idx, sign)
}

/// Deterministic hashed bag-of-tokens embedding, L2-normalized.
pub fn embed(prompt: &Prompt) -> Vec<f64> {
    let mut v = vec![0.0f64; EMBED_DIM];
    for token in &prompt.tokens {
        let (idx, sign) = token_index_sign(token);
        v[idx] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        // tokens cancelled exactly; fall back to a single slot from the id
        let (idx, _) = token_index_sign(&prompt.id);
        v[idx] = 1.0;
        return v;
    }
    v.iter().map(|x| x / norm).collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Key-Useful / Key-Irrelevant token sets; always disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeywordSets {
    pub ku: BTreeSet<String>,
    pub ki: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptFitnessParams {
    /// Weights over the worker's metric vector; must sum to 1.
    pub metric_weights: Vec<f64>,
    pub lambda_tok: f64,
    pub lambda_div: f64,
    pub lambda_exp: f64,
    /// Diversity margin: maximum admissible cosine similarity.
    pub delta: f64,
}

impl Default for PromptFitnessParams {
    fn default() -> Self {
        PromptFitnessParams {
            metric_weights: vec![1.0],
            lambda_tok: 0.001,
            lambda_div: 0.1,
            lambda_exp: 0.05,
            delta: 0.95,
        }
    }
}

impl PromptFitnessParams {
    pub fn validate(&self) -> Result<()> {
        if self.metric_weights.is_empty() || self.metric_weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::validation("metric_weights", "must be nonempty and nonnegative"));
        }
        let sum: f64 = self.metric_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("metric_weights", format!("must sum to 1, got {sum}")));
        }
        for (name, l) in [("lambda_tok", self.lambda_tok), ("lambda_div", self.lambda_div), ("lambda_exp", self.lambda_exp)] {
            if l < 0.0 || !l.is_finite() {
                return Err(Error::validation(name, "must be finite and nonnegative"));
            }
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::validation("delta", "must lie strictly inside (0, 1)"));
        }
        Ok(())
    }
}

/// Task description consumed by workers. The mock worker scores coverage of
/// the planted keyword set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub planted: Vec<String>,
    #[serde(default)]
    pub noise_seed: u64,
}

/// A full prompt-evolution run description, as read from a task file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRunSpec {
    pub task: TaskSpec,
    pub seed_prompts: Vec<String>,
    #[serde(default)]
    pub params: PromptFitnessParams,
    #[serde(default)]
    pub ga: PromptGaParams,
}

/// Executes a prompt on a task and returns metrics in `[0, 1]`. Evaluators
/// must be pure and deterministic for a fixed task seed. This trait is the
/// adapter point for external workers; only the deterministic mock ships.
pub trait WorkerEvaluator {
    fn evaluate(&self, prompt: &Prompt, task: &TaskSpec) -> Result<Vec<f64>>;
}

/// Deterministic stand-in worker: a smooth increasing function of planted
/// keyword coverage, minus a small per-distractor penalty and a noise term
/// that fades as coverage saturates.
#[derive(Debug, Clone, Default)]
pub struct MockWorker;

/// Builds the mock evaluator for a planted-keyword task.
pub fn mock_worker(task: &TaskSpec) -> Result<MockWorker> {
    if task.planted.is_empty() {
        return Err(Error::validation("planted", "mock worker needs a nonempty planted set"));
    }
    Ok(MockWorker)
}

impl WorkerEvaluator for MockWorker {
    fn evaluate(&self, prompt: &Prompt, task: &TaskSpec) -> Result<Vec<f64>> {
        if task.planted.is_empty() {
            return Err(Error::Evaluation {
                prompt_id: prompt.id.clone(),
                message: "planted set is empty".into(),
            });
        }
        let planted: HashSet<String> = task.planted.iter().map(|t| t.to_lowercase()).collect();
        let present = prompt
            .token_set()
            .iter()
            .filter(|t| planted.contains(**t))
            .count();
        let coverage = present as f64 / planted.len() as f64;
        let smooth = coverage * (2.0 - coverage);
        let distractors = prompt.tokens.iter().filter(|t| !planted.contains(*t)).count();
        let mut h = Sha256::new();
        h.update(prompt.id.as_bytes());
        h.update(task.noise_seed.to_le_bytes());
        let jitter = (h.finalize()[0] as f64 / 255.0) * 0.003 * (1.0 - coverage);
        let score = (smooth - 0.02 * distractors as f64 - jitter).clamp(0.0, 1.0);
        Ok(vec![score])
    }
}

/// Regularized prompt fitness: weighted worker metrics minus token cost,
/// soft diversity hinge over the population and the untraceable-token
/// fraction.
pub fn prompt_fitness(
    p: &Prompt,
    task: &TaskSpec,
    pop: &[Prompt],
    params: &PromptFitnessParams,
    worker: &dyn WorkerEvaluator,
    kw: &KeywordSets,
) -> Result<f64> {
    params.validate()?;
    let metrics = worker.evaluate(p, task)?;
    if metrics.len() != params.metric_weights.len() {
        return Err(Error::Argument(format!(
            "worker returned {} metric(s), expected {}",
            metrics.len(),
            params.metric_weights.len()
        )));
    }
    let base: f64 = metrics.iter().zip(&params.metric_weights).map(|(m, w)| m * w).sum();

    let token_cost = p.tokens.len() as f64;

    let pe = embed(p);
    let diversity: f64 = pop
        .iter()
        .map(|q| (cosine(&pe, &embed(q)) - params.delta).max(0.0))
        .sum();

    let untraceable = p
        .tokens
        .iter()
        .filter(|t| !kw.ku.contains(*t) && !kw.ki.contains(*t))
        .count() as f64
        / p.tokens.len() as f64;

    Ok(base - params.lambda_tok * token_cost - params.lambda_div * diversity - params.lambda_exp * untraceable)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptGaParams {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    pub seed: u64,
}

impl Default for PromptGaParams {
    fn default() -> Self {
        PromptGaParams {
            pop_size: 24,
            generations: 40,
            crossover_prob: 0.9,
            mutation_prob: 0.6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptTraceRow {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
    pub ku_size: usize,
    pub ki_size: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PromptTrace {
    pub rows: Vec<PromptTraceRow>,
}

impl PromptTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("generation,best,mean,ku,ki\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.generation, r.best, r.mean, r.ku_size, r.ki_size
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct PromptEvolution {
    pub best: Prompt,
    pub best_fitness: f64,
    pub final_pop: Vec<Prompt>,
    pub kw: KeywordSets,
    pub trace: PromptTrace,
}

/// Log-odds threshold for quartile keyword extraction.
const KEYWORD_LOG_ODDS: f64 = 1.0;

/// Recomputes KU/KI from presence counts in the top vs bottom fitness
/// quartiles, add-one smoothed. Sets are disjoint by the sign of the score.
pub fn update_keywords(pop: &[Prompt], fitness: &[f64]) -> KeywordSets {
    let n = pop.len();
    let q = n.div_ceil(4);
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| fitness[b].partial_cmp(&fitness[a]).expect("finite fitness").then(a.cmp(&b)));
    let top: Vec<&Prompt> = ranked[..q].iter().map(|&i| &pop[i]).collect();
    let bottom: Vec<&Prompt> = ranked[n - q..].iter().map(|&i| &pop[i]).collect();

    let mut vocab: BTreeSet<&str> = BTreeSet::new();
    for p in top.iter().chain(bottom.iter()) {
        vocab.extend(p.token_set());
    }

    let presence = |group: &[&Prompt], tok: &str| group.iter().filter(|p| p.token_set().contains(tok)).count() as f64;
    let mut kw = KeywordSets::default();
    for tok in vocab {
        let ct = presence(&top, tok);
        let cb = presence(&bottom, tok);
        let odds_top = (ct + 1.0) / (top.len() as f64 - ct + 1.0);
        let odds_bot = (cb + 1.0) / (bottom.len() as f64 - cb + 1.0);
        let score = (odds_top / odds_bot).ln();
        if score >= KEYWORD_LOG_ODDS {
            kw.ku.insert(tok.to_string());
        } else if score <= -KEYWORD_LOG_ODDS {
            kw.ki.insert(tok.to_string());
        }
    }
    kw
}

/// Evolves a prompt population against a worker. Deterministic per seed.
///
/// Each generation: KU/KI update from quartiles, segment crossover of
/// top-ranked parents, KU-insert / KI-delete / swap mutation, then
/// fitness-ordered admission under the pairwise-δ bound. The best admitted
/// individual ever evaluated is returned.
pub fn evolve_prompts(
    task: &TaskSpec,
    seed_pop: &[Prompt],
    params: &PromptFitnessParams,
    ga: &PromptGaParams,
    worker: &dyn WorkerEvaluator,
) -> Result<PromptEvolution> {
    if seed_pop.is_empty() {
        return Err(Error::Argument("seed population must be nonempty".into()));
    }
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ga.seed);
    let mut pop: Vec<Prompt> = seed_pop.to_vec();
    let mut kw = KeywordSets::default();

    let eval_pop = |pop: &[Prompt], kw: &KeywordSets| -> Result<Vec<f64>> {
        pop.iter().map(|p| prompt_fitness(p, task, pop, params, worker, kw)).collect()
    };
    let mut fitness = eval_pop(&pop, &kw)?;

    let (mut best, mut best_fitness) = {
        let i = argmax(&fitness);
        (pop[i].clone(), fitness[i])
    };
    let mut trace = PromptTrace::default();
    push_row(&mut trace, 0, &fitness, &kw);

    for gen in 1..=ga.generations {
        kw = update_keywords(&pop, &fitness);

        let mut ranked: Vec<usize> = (0..pop.len()).collect();
        ranked.sort_by(|&a, &b| fitness[b].partial_cmp(&fitness[a]).expect("finite fitness").then(a.cmp(&b)));
        let parent_pool: Vec<usize> = ranked[..pop.len().div_ceil(2)].to_vec();

        // elite first, then fitness-ranked candidates under the δ bound
        let elite = pop[ranked[0]].clone();
        let mut accepted: Vec<Prompt> = vec![elite];
        let mut accepted_embeds: Vec<Vec<f64>> = vec![embed(&accepted[0])];

        let max_attempts = 100 * ga.pop_size;
        let mut attempts = 0;
        while accepted.len() < ga.pop_size && attempts < max_attempts {
            // breed a candidate batch, score it, admit greedily by fitness
            let batch = (2 * ga.pop_size).max(8);
            let mut candidates: Vec<Prompt> = Vec::with_capacity(batch);
            for _ in 0..batch {
                attempts += 1;
                let a = &pop[*parent_pool.choose(&mut rng).expect("nonempty pool")];
                let b = &pop[*parent_pool.choose(&mut rng).expect("nonempty pool")];
                let mut child = if rng.gen::<f64>() < ga.crossover_prob {
                    segment_crossover(a, b, &mut rng)
                } else {
                    a.clone()
                };
                if rng.gen::<f64>() < ga.mutation_prob {
                    mutate(&mut child, &kw, &mut rng);
                }
                if let Ok(p) = Prompt::from_tokens(child.tokens) {
                    candidates.push(p);
                }
            }
            let mut scored: Vec<(f64, Prompt)> = candidates
                .into_iter()
                .map(|c| prompt_fitness(&c, task, &pop, params, worker, &kw).map(|f| (f, c)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite fitness"));
            for (_, cand) in scored {
                if accepted.len() >= ga.pop_size {
                    break;
                }
                let ce = embed(&cand);
                let max_sim = accepted_embeds
                    .iter()
                    .map(|e| cosine(&ce, e))
                    .fold(f64::NEG_INFINITY, f64::max);
                if max_sim < params.delta {
                    accepted.push(cand);
                    accepted_embeds.push(ce);
                }
            }
        }
        if accepted.len() < ga.pop_size {
            log::warn!(
                "admission deadlock at generation {gen}: filling {} slot(s) from ranked parents",
                ga.pop_size - accepted.len()
            );
            for &i in ranked.iter().cycle() {
                if accepted.len() >= ga.pop_size {
                    break;
                }
                accepted.push(pop[i].clone());
            }
        }

        pop = accepted;
        fitness = eval_pop(&pop, &kw)?;
        let i = argmax(&fitness);
        if fitness[i] > best_fitness {
            best = pop[i].clone();
            best_fitness = fitness[i];
        }
        push_row(&mut trace, gen, &fitness, &kw);
    }

    Ok(PromptEvolution {
        best,
        best_fitness,
        final_pop: pop,
        kw,
        trace,
    })
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len())
        .max_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite").then(b.cmp(&a)))
        .expect("nonempty")
}

fn push_row(trace: &mut PromptTrace, generation: usize, fitness: &[f64], kw: &KeywordSets) {
    let best = fitness.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = fitness.iter().sum::<f64>() / fitness.len() as f64;
    trace.rows.push(PromptTraceRow {
        generation,
        best,
        mean,
        ku_size: kw.ku.len(),
        ki_size: kw.ki.len(),
    });
}

/// Contiguous-segment recombination: a prefix of `a` spliced to a suffix of
/// `b`.
fn segment_crossover(a: &Prompt, b: &Prompt, rng: &mut ChaCha8Rng) -> Prompt {
    let cut_a = rng.gen_range(1..=a.tokens.len());
    let cut_b = rng.gen_range(0..b.tokens.len());
    let mut tokens: Vec<String> = a.tokens[..cut_a].to_vec();
    tokens.extend_from_slice(&b.tokens[cut_b..]);
    Prompt::from_tokens(tokens).expect("nonempty by construction")
}

/// KU/KI-constrained mutation: insert a KU token, delete a KI token or swap
/// two positions, choosing uniformly among the applicable operators.
fn mutate(p: &mut Prompt, kw: &KeywordSets, rng: &mut ChaCha8Rng) {
    let ku: Vec<&String> = kw.ku.iter().collect();
    let ki_positions: Vec<usize> = p
        .tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| kw.ki.contains(*t))
        .map(|(i, _)| i)
        .collect();
    let mut ops: Vec<u8> = Vec::new();
    if !ku.is_empty() {
        ops.push(0);
    }
    if !ki_positions.is_empty() && p.tokens.len() > 1 {
        ops.push(1);
    }
    if p.tokens.len() >= 2 {
        ops.push(2);
    }
    let Some(&op) = ops.choose(rng) else { return };
    match op {
        0 => {
            let tok = ku[rng.gen_range(0..ku.len())].clone();
            let pos = rng.gen_range(0..=p.tokens.len());
            p.tokens.insert(pos, tok);
        }
        1 => {
            let pos = ki_positions[rng.gen_range(0..ki_positions.len())];
            p.tokens.remove(pos);
        }
        _ => {
            let i = rng.gen_range(0..p.tokens.len());
            let j = rng.gen_range(0..p.tokens.len());
            p.tokens.swap(i, j);
        }
    }
}
