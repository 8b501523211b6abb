//! Subclass Brain Registry: file-backed persistence and query layer for
//! triplets and cognitive signatures, plus swarm-level scoring.
//!
//! Persistence is a directory of line-delimited JSON records with an
//! in-memory index rebuilt on open. Writes go through a single writer that
//! holds an exclusive lock file; readers open without the lock.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricVector;
use crate::prompt::{cosine, embed, Prompt, EMBED_DIM};

const TRIPLET_FILE: &str = "triplets.jsonl";
const SIGNATURE_FILE: &str = "signatures.jsonl";
const LOCK_FILE: &str = "registry.lock";

/// Weight of the KU-overlap bonus / KI-overlap penalty in signature scoring.
const KEYWORD_SCORE_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub metrics: MetricVector,
    pub schedule_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Triplet {
    pub prompt_id: String,
    pub prompt_text: String,
    pub fitness: f64,
    pub solution: SolutionSummary,
    /// Logical timestamp supplied by the caller; wall clocks would break
    /// rerun determinism.
    pub timestamp: u64,
    pub user_id: String,
}

impl Triplet {
    pub fn validate(&self) -> Result<()> {
        if !self.fitness.is_finite() {
            return Err(Error::validation("fitness", "must be finite"));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(Error::validation("prompt_text", "must be nonempty"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopPrompt {
    pub prompt: String,
    pub response: String,
    pub score: f64,
}

/// Per-user cognitive signature. The serialized field names mirror the
/// exported signature document (`user`, `domain`, `KU`, `KI`,
/// `Top5_Prompts`) with additive fields `rho`, `behavior_tags`, `centroid`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CognitiveSignature {
    pub user: String,
    pub domain: String,
    #[serde(rename = "KU")]
    pub ku: Vec<String>,
    #[serde(rename = "KI")]
    pub ki: Vec<String>,
    #[serde(rename = "Top5_Prompts")]
    pub top_prompts: Vec<TopPrompt>,
    #[serde(default)]
    pub behavior_tags: Vec<String>,
    /// Reliability in [0, 1]; defaults to 1.
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Unit-norm mean embedding of the top prompts; computed when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centroid: Option<Vec<f64>>,
}

fn default_rho() -> f64 {
    1.0
}

impl CognitiveSignature {
    /// Validates invariants and fills the centroid when missing.
    pub fn normalize(&mut self) -> Result<()> {
        if self.user.trim().is_empty() {
            return Err(Error::validation("user", "must be nonempty"));
        }
        if self.top_prompts.len() > 5 {
            return Err(Error::validation("Top5_Prompts", "at most 5 entries"));
        }
        for tp in &self.top_prompts {
            if !(0.0..=1.0).contains(&tp.score) {
                return Err(Error::validation("Top5_Prompts.score", "scores must lie in [0, 1]"));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::validation("rho", "must lie in [0, 1]"));
        }
        match &self.centroid {
            Some(c) => {
                if c.len() != EMBED_DIM {
                    return Err(Error::validation("centroid", format!("must have dimension {EMBED_DIM}")));
                }
                let norm: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-6 {
                    return Err(Error::validation("centroid", "must be unit-norm"));
                }
            }
            None => {
                self.centroid = Some(self.computed_centroid()?);
            }
        }
        Ok(())
    }

    /// Unit-norm mean embedding of the top prompts (falling back to the
    /// domain, then the user string, when no prompts are stored).
    fn computed_centroid(&self) -> Result<Vec<f64>> {
        let mut texts: Vec<&str> = self
            .top_prompts
            .iter()
            .map(|tp| tp.prompt.as_str())
            .filter(|t| !t.trim().is_empty())
            .collect();
        if texts.is_empty() {
            if !self.domain.trim().is_empty() {
                texts.push(self.domain.as_str());
            } else {
                texts.push(self.user.as_str());
            }
        }
        let mut acc = vec![0.0f64; EMBED_DIM];
        for t in &texts {
            let p = Prompt::parse(t)?;
            for (i, v) in embed(&p).iter().enumerate() {
                acc[i] += v;
            }
        }
        let norm: f64 = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            acc[0] = 1.0;
            return Ok(acc);
        }
        Ok(acc.iter().map(|x| x / norm).collect())
    }

    pub fn centroid_vector(&self) -> &[f64] {
        self.centroid.as_deref().expect("normalized signature")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "data", rename_all = "snake_case")]
pub enum Record {
    Triplet(Triplet),
    Signature(CognitiveSignature),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredLine {
    id: String,
    #[serde(flatten)]
    record: Record,
}

/// Exclusive writer lock; the file disappears when the guard drops.
#[derive(Debug)]
struct WriterLock {
    path: PathBuf,
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug)]
pub struct Registry {
    dir: PathBuf,
    triplets: Vec<(String, Triplet)>,
    signatures: Vec<(String, CognitiveSignature)>,
    lock: Option<WriterLock>,
}

impl Registry {
    /// Read-only open: rebuilds the in-memory index from the record files.
    pub fn open(dir: &Path) -> Result<Self> {
        let mut reg = Registry {
            dir: dir.to_path_buf(),
            triplets: Vec::new(),
            signatures: Vec::new(),
            lock: None,
        };
        reg.load()?;
        Ok(reg)
    }

    /// Writer open: takes the exclusive lock file.
    pub fn open_writer(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let lock_path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock_path)
            .map_err(|e| {
                Error::Storage(std::io::Error::new(
                    e.kind(),
                    format!("cannot take registry lock {}: {e}", lock_path.display()),
                ))
            })?;
        let mut reg = Registry {
            dir: dir.to_path_buf(),
            triplets: Vec::new(),
            signatures: Vec::new(),
            lock: Some(WriterLock { path: lock_path }),
        };
        reg.load()?;
        Ok(reg)
    }

    fn load(&mut self) -> Result<()> {
        for (file, kind) in [(TRIPLET_FILE, "triplet"), (SIGNATURE_FILE, "signature")] {
            let path = self.dir.join(file);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path)?;
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let stored: StoredLine = serde_json::from_str(line).map_err(|e| Error::Schema {
                    line: Some(lineno + 1),
                    message: format!("{file}: {e}"),
                })?;
                match stored.record {
                    Record::Triplet(t) if kind == "triplet" => self.triplets.push((stored.id, t)),
                    Record::Signature(s) if kind == "signature" => self.signatures.push((stored.id, s)),
                    _ => {
                        return Err(Error::Schema {
                            line: Some(lineno + 1),
                            message: format!("{file}: record kind does not match file"),
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn require_writer(&self) -> Result<()> {
        if self.lock.is_none() {
            return Err(Error::Argument("registry opened read-only".into()));
        }
        Ok(())
    }

    fn append(&self, file: &str, line: &StoredLine) -> Result<()> {
        let path = self.dir.join(file);
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        let mut text = serde_json::to_string(line).expect("record serializes");
        text.push('\n');
        f.write_all(text.as_bytes())?;
        Ok(())
    }

    /// Append-only triplet store; returns the record id.
    pub fn store_triplet(&mut self, triplet: &Triplet) -> Result<String> {
        self.require_writer()?;
        triplet.validate()?;
        let id = format!("t-{:06}-{}", self.triplets.len(), &triplet.prompt_id[..8.min(triplet.prompt_id.len())]);
        self.append(
            TRIPLET_FILE,
            &StoredLine {
                id: id.clone(),
                record: Record::Triplet(triplet.clone()),
            },
        )?;
        self.triplets.push((id.clone(), triplet.clone()));
        Ok(id)
    }

    /// Append-only signature store; fills the centroid when missing and
    /// returns the record id.
    pub fn store_signature(&mut self, signature: &CognitiveSignature) -> Result<String> {
        self.require_writer()?;
        let mut sig = signature.clone();
        sig.normalize()?;
        let id = format!("s-{:06}-{}", self.signatures.len(), crate::prompt::stable_text_id(&sig.user)[..8].to_string());
        self.append(
            SIGNATURE_FILE,
            &StoredLine {
                id: id.clone(),
                record: Record::Signature(sig.clone()),
            },
        )?;
        self.signatures.push((id, sig));
        Ok(self.signatures.last().expect("just pushed").0.clone())
    }

    pub fn get_triplet(&self, id: &str) -> Option<&Triplet> {
        self.triplets.iter().find(|(i, _)| i == id).map(|(_, t)| t)
    }

    pub fn get_signature(&self, id: &str) -> Option<&CognitiveSignature> {
        self.signatures.iter().find(|(i, _)| i == id).map(|(_, s)| s)
    }

    pub fn triplets(&self) -> &[(String, Triplet)] {
        &self.triplets
    }

    pub fn signatures(&self) -> &[(String, CognitiveSignature)] {
        &self.signatures
    }

    pub fn len(&self) -> usize {
        self.triplets.len() + self.signatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exact brute-force top-k by cosine against signature centroids and
    /// triplet prompt embeddings; ties break on record id.
    pub fn query_similar(&self, vector: &[f64], k: usize) -> Result<Vec<SimilarityHit>> {
        if k == 0 {
            return Err(Error::Argument("k must be positive".into()));
        }
        if vector.len() != EMBED_DIM {
            return Err(Error::Argument(format!("query vector must have dimension {EMBED_DIM}")));
        }
        if self.is_empty() {
            return Err(Error::Argument("registry is empty".into()));
        }
        let mut hits: Vec<SimilarityHit> = Vec::with_capacity(self.len());
        for (id, t) in &self.triplets {
            let p = Prompt::parse(&t.prompt_text)?;
            hits.push(SimilarityHit {
                id: id.clone(),
                kind: "triplet",
                score: cosine(vector, &embed(&p)),
            });
        }
        for (id, s) in &self.signatures {
            hits.push(SimilarityHit {
                id: id.clone(),
                kind: "signature",
                score: cosine(vector, s.centroid_vector()),
            });
        }
        hits.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.id.cmp(&b.id))
        });
        hits.truncate(k);
        Ok(hits)
    }

    /// Pattern library: top-k triplets by fitness per domain, grouped with
    /// the domain's KU token union. A triplet's domain comes from the first
    /// stored signature of its user; unmatched users fall under "general".
    /// Fitness ties break by timestamp, then record id.
    pub fn distill(&self, top_k: usize) -> Result<Vec<DomainPatterns>> {
        if self.triplets.is_empty() {
            return Err(Error::Argument("registry holds no triplets".into()));
        }
        let domain_of = |user: &str| -> String {
            self.signatures
                .iter()
                .find(|(_, s)| s.user == user)
                .map(|(_, s)| s.domain.clone())
                .unwrap_or_else(|| "general".to_string())
        };
        let mut groups: BTreeMap<String, Vec<(String, Triplet)>> = BTreeMap::new();
        for (id, t) in &self.triplets {
            groups
                .entry(domain_of(&t.user_id))
                .or_default()
                .push((id.clone(), t.clone()));
        }
        let mut out = Vec::new();
        for (domain, mut triplets) in groups {
            triplets.sort_by(|a, b| {
                b.1.fitness
                    .partial_cmp(&a.1.fitness)
                    .expect("finite fitness")
                    .then_with(|| a.1.timestamp.cmp(&b.1.timestamp))
                    .then_with(|| a.0.cmp(&b.0))
            });
            triplets.truncate(top_k);
            let mut ku: BTreeSet<String> = BTreeSet::new();
            for (_, s) in self.signatures.iter().filter(|(_, s)| s.domain == domain) {
                ku.extend(s.ku.iter().cloned());
            }
            out.push(DomainPatterns {
                domain,
                top: triplets,
                ku_union: ku.into_iter().collect(),
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimilarityHit {
    pub id: String,
    pub kind: &'static str,
    pub score: f64,
}

/// One domain's distilled patterns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainPatterns {
    pub domain: String,
    pub top: Vec<(String, Triplet)>,
    pub ku_union: Vec<String>,
}

pub const SWARM_METRICS: [&str; 4] = ["accuracy", "creativity", "generality", "robustness"];

/// Weights over the swarm metrics; nonnegative, sum 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmWeights {
    pub weights: Vec<f64>,
}

impl SwarmWeights {
    pub fn uniform(n: usize) -> Self {
        SwarmWeights {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::validation("weights", "must be nonempty and nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation("weights", format!("must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwarmScores {
    /// Weighted sums per agent, row-aligned with the input matrix.
    pub scores: Vec<f64>,
    /// Agent indices sorted by descending score; ties keep index order.
    pub ranking: Vec<usize>,
}

/// Weighted per-agent swarm fitness over a metric matrix
/// (rows = agents, columns aligned with the weights).
pub fn swarm_fitness(metrics: &[Vec<f64>], w: &SwarmWeights) -> Result<SwarmScores> {
    w.validate()?;
    let scores: Vec<f64> = metrics
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != w.weights.len() {
                return Err(Error::Argument(format!(
                    "agent {i} has {} metric(s), expected {}",
                    row.len(),
                    w.weights.len()
                )));
            }
            Ok(row.iter().zip(&w.weights).map(|(m, w)| m * w).sum())
        })
        .collect::<Result<_>>()?;
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    Ok(SwarmScores { scores, ranking })
}

/// Reliability-weighted prompt distribution over signatures:
/// `Q(p) ∝ Σ_u α_u S(p, c_u)` with `α_u ∝ ρ_u`. `S` is the clamped cosine
/// against the signature centroid plus a KU-overlap bonus minus a
/// KI-overlap penalty, clamped at zero. Falls back to the uniform
/// distribution when every score vanishes.
pub fn aggregate_q(prompts: &[Prompt], signatures: &[CognitiveSignature]) -> Result<Vec<f64>> {
    if prompts.is_empty() || signatures.is_empty() {
        return Err(Error::Argument("aggregate_q needs prompts and signatures".into()));
    }
    let rho_sum: f64 = signatures.iter().map(|s| s.rho).sum();
    let uniform = vec![1.0 / prompts.len() as f64; prompts.len()];
    if rho_sum <= 0.0 {
        return Ok(uniform);
    }
    let mut q = vec![0.0f64; prompts.len()];
    for sig in signatures {
        let alpha = sig.rho / rho_sum;
        if alpha == 0.0 {
            continue;
        }
        let centroid = sig
            .centroid
            .as_deref()
            .ok_or_else(|| Error::validation("centroid", "signature must be normalized before aggregation"))?;
        let ku: BTreeSet<&str> = sig.ku.iter().map(String::as_str).collect();
        let ki: BTreeSet<&str> = sig.ki.iter().map(String::as_str).collect();
        for (i, p) in prompts.iter().enumerate() {
            q[i] += alpha * signature_score(p, centroid, &ku, &ki);
        }
    }
    let total: f64 = q.iter().sum();
    if total <= 0.0 {
        return Ok(uniform);
    }
    Ok(q.iter().map(|x| x / total).collect())
}

/// `S(p, c)`: clamped centroid cosine + KU bonus − KI penalty, clamped ≥ 0.
fn signature_score(p: &Prompt, centroid: &[f64], ku: &BTreeSet<&str>, ki: &BTreeSet<&str>) -> f64 {
    let sim = cosine(&embed(p), centroid).max(0.0);
    let tokens = p.token_set();
    let total = tokens.len() as f64;
    let ku_frac = tokens.iter().filter(|t| ku.contains(**t)).count() as f64 / total;
    let ki_frac = tokens.iter().filter(|t| ki.contains(**t)).count() as f64 / total;
    (sim + KEYWORD_SCORE_WEIGHT * ku_frac - KEYWORD_SCORE_WEIGHT * ki_frac).max(0.0)
}
