//! Vertiport world model: UAV requests, per-class pads, time-varying pad
//! weights and deterministic scenario generation.
//!
//! A scenario file is a JSON document with top-level keys `horizon`, `seed`,
//! `bin_width`, `classes[]`, `weather[]` and an optional explicit `requests[]`
//! list that overrides generation. See `docs/scenario_schema.md`.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// UAV classes are 1..=3 throughout.
pub const MAX_CLASS_ID: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PriorityTag {
    #[default]
    Normal,
    Medical,
    Cargo,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UavRequest {
    pub id: u32,
    pub class_id: u32,
    /// Seconds from scenario start at which the request becomes ready.
    pub release_time: u64,
    /// Total service seconds this take-off demands.
    pub service_demand: u64,
    #[serde(default)]
    pub priority_tag: PriorityTag,
}

/// Pad pool for one UAV class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PadConfig {
    pub class_id: u32,
    pub pad_count: u32,
    /// Minimum gap between consecutive grants on one pad, seconds.
    pub separation: u64,
}

/// Piecewise-constant pad weights `w_k(t)` per class, binned over the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadWeightProfile {
    pub bin_width: u64,
    /// Indexed `[class position][bin]`, aligned with `Scenario::classes`.
    pub weights: Vec<Vec<f64>>,
}

impl PadWeightProfile {
    pub fn bins(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    /// Weight for a class row at time `t`, clamping past-horizon times into
    /// the final bin (congested schedules may spill past the horizon).
    pub fn weight_at(&self, class_index: usize, t: u64) -> f64 {
        let bin = ((t / self.bin_width) as usize).min(self.bins() - 1);
        self.weights[class_index][bin]
    }
}

/// One step of the weather schedule: a multiplier on pad weights over
/// `[start, end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherPhase {
    pub start: u64,
    pub end: u64,
    pub weight_multiplier: f64,
}

/// Per-class generation and capacity parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub class_id: u32,
    /// Poisson arrival rate, requests per second.
    pub rate: f64,
    pub pad_count: u32,
    #[serde(default)]
    pub separation: u64,
    /// Defaults to the 30 s service quantum.
    #[serde(default = "default_service_demand")]
    pub service_demand: u64,
    /// Time-constant base pad weight for this class.
    #[serde(default = "default_base_weight")]
    pub base_weight: f64,
}

fn default_service_demand() -> u64 {
    30
}

fn default_base_weight() -> f64 {
    1.0
}

fn default_bin_width() -> u64 {
    60
}

/// Scenario document: both the generation config and the on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub horizon: u64,
    pub seed: u64,
    #[serde(default = "default_bin_width")]
    pub bin_width: u64,
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub weather: Vec<WeatherPhase>,
    /// Explicit request list; overrides Poisson generation when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requests: Option<Vec<UavRequest>>,
}

/// Stratification label: every request belongs to exactly one
/// (class, weather regime) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionLabel {
    pub class_id: u32,
    /// Index into the normalized weather phases.
    pub weather_regime: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub horizon: u64,
    pub seed: u64,
    pub classes: Vec<ClassSpec>,
    pub pads: Vec<PadConfig>,
    pub requests: Vec<UavRequest>,
    pub pad_weights: PadWeightProfile,
    /// Normalized weather phases tiling `[0, horizon)`.
    pub weather: Vec<WeatherPhase>,
    /// One label per request, aligned with `requests`.
    pub condition_labels: Vec<ConditionLabel>,
}

impl Scenario {
    pub fn from_spec(spec: &ScenarioSpec) -> Result<Self> {
        validate_spec(spec)?;
        let weather = normalize_weather(&spec.weather, spec.horizon)?;
        let mut classes = spec.classes.clone();
        classes.sort_by_key(|c| c.class_id);
        let pad_weights = build_profile(&classes, &weather, spec.horizon, spec.bin_width);
        let requests = match &spec.requests {
            Some(explicit) => {
                let mut reqs = explicit.clone();
                reqs.sort_by_key(|r| (r.release_time, r.class_id, r.id));
                reqs
            }
            None => generate_requests(&classes, spec.horizon, spec.seed),
        };
        let pads = classes
            .iter()
            .map(|c| PadConfig {
                class_id: c.class_id,
                pad_count: c.pad_count,
                separation: c.separation,
            })
            .collect();
        let condition_labels = requests
            .iter()
            .map(|r| ConditionLabel {
                class_id: r.class_id,
                weather_regime: phase_index(&weather, r.release_time),
            })
            .collect();
        let scenario = Scenario {
            horizon: spec.horizon,
            seed: spec.seed,
            classes,
            pads,
            requests,
            pad_weights,
            weather,
            condition_labels,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Re-checks every invariant; called after build and after load.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for r in &self.requests {
            if !seen.insert(r.id) {
                return Err(Error::validation("requests.id", format!("duplicate id {}", r.id)));
            }
            if r.class_id == 0 || r.class_id > MAX_CLASS_ID {
                return Err(Error::validation(
                    "requests.class_id",
                    format!("request {}: class {} outside 1..={MAX_CLASS_ID}", r.id, r.class_id),
                ));
            }
            if self.class_index(r.class_id).is_none() {
                return Err(Error::validation(
                    "requests.class_id",
                    format!("request {}: class {} has no pad configuration", r.id, r.class_id),
                ));
            }
            if r.release_time > self.horizon {
                return Err(Error::validation(
                    "requests.release_time",
                    format!("request {}: release {} past horizon {}", r.id, r.release_time, self.horizon),
                ));
            }
            if r.service_demand == 0 {
                return Err(Error::validation(
                    "requests.service_demand",
                    format!("request {}: service demand must be positive", r.id),
                ));
            }
        }
        for row in &self.pad_weights.weights {
            if row.len() != self.pad_weights.bins() {
                return Err(Error::validation("pad_weights", "ragged weight matrix"));
            }
            if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::validation("pad_weights", "weights must be finite and nonnegative"));
            }
        }
        let covered = self.pad_weights.bins() as u64 * self.pad_weights.bin_width;
        if covered < self.horizon {
            return Err(Error::validation("pad_weights", "weight bins do not cover the horizon"));
        }
        Ok(())
    }

    /// Position of a class id inside `classes` / `pad_weights` rows.
    pub fn class_index(&self, class_id: u32) -> Option<usize> {
        self.classes.iter().position(|c| c.class_id == class_id)
    }

    pub fn class(&self, class_id: u32) -> Option<&ClassSpec> {
        self.classes.iter().find(|c| c.class_id == class_id)
    }

    /// Time-varying pad weight `w_k(t)`; errors past the horizon.
    pub fn pad_weight(&self, class_id: u32, t: u64) -> Result<f64> {
        if t > self.horizon {
            return Err(Error::Range(format!(
                "time {t} past horizon {}",
                self.horizon
            )));
        }
        let ci = self
            .class_index(class_id)
            .ok_or_else(|| Error::Argument(format!("unknown class {class_id}")))?;
        Ok(self.pad_weights.weight_at(ci, t))
    }

    /// Like `pad_weight` but clamping past-horizon times into the last bin;
    /// used for penalty accounting on schedules that spill past the horizon.
    pub fn pad_weight_clamped(&self, class_id: u32, t: u64) -> f64 {
        let ci = self.class_index(class_id).expect("validated class id");
        self.pad_weights.weight_at(ci, t.min(self.horizon))
    }
}

fn validate_spec(spec: &ScenarioSpec) -> Result<()> {
    if spec.horizon == 0 {
        return Err(Error::Config("horizon must be positive".into()));
    }
    if spec.classes.is_empty() {
        return Err(Error::Config("at least one UAV class is required".into()));
    }
    if spec.bin_width == 0 {
        return Err(Error::validation("bin_width", "must be positive"));
    }
    let mut ids = std::collections::HashSet::new();
    for c in &spec.classes {
        if c.class_id == 0 || c.class_id > MAX_CLASS_ID {
            return Err(Error::validation(
                "classes.class_id",
                format!("class {} outside 1..={MAX_CLASS_ID}", c.class_id),
            ));
        }
        if !ids.insert(c.class_id) {
            return Err(Error::validation("classes.class_id", format!("duplicate class {}", c.class_id)));
        }
        if c.pad_count == 0 {
            return Err(Error::validation("classes.pad_count", format!("class {}: need at least one pad", c.class_id)));
        }
        if c.service_demand == 0 {
            return Err(Error::validation("classes.service_demand", format!("class {}: must be positive", c.class_id)));
        }
        if !c.rate.is_finite() || c.rate < 0.0 {
            return Err(Error::validation("classes.rate", format!("class {}: must be finite and nonnegative", c.class_id)));
        }
        if !c.base_weight.is_finite() || c.base_weight < 0.0 {
            return Err(Error::validation("classes.base_weight", format!("class {}: must be finite and nonnegative", c.class_id)));
        }
    }
    Ok(())
}

/// Sorts phases, validates overlaps and fills gaps with multiplier 1.0 so the
/// result tiles `[0, horizon)`.
fn normalize_weather(phases: &[WeatherPhase], horizon: u64) -> Result<Vec<WeatherPhase>> {
    let mut sorted: Vec<WeatherPhase> = phases.to_vec();
    sorted.sort_by_key(|p| p.start);
    let mut tiled = Vec::new();
    let mut cursor = 0u64;
    for p in &sorted {
        if p.end <= p.start {
            return Err(Error::validation("weather", format!("phase [{}, {}) is empty", p.start, p.end)));
        }
        if !p.weight_multiplier.is_finite() || p.weight_multiplier < 0.0 {
            return Err(Error::validation("weather.weight_multiplier", "must be finite and nonnegative"));
        }
        if p.start < cursor {
            return Err(Error::validation("weather", format!("phase starting at {} overlaps the previous one", p.start)));
        }
        if p.start >= horizon {
            continue;
        }
        if p.start > cursor {
            tiled.push(WeatherPhase { start: cursor, end: p.start, weight_multiplier: 1.0 });
        }
        tiled.push(WeatherPhase { start: p.start, end: p.end.min(horizon), weight_multiplier: p.weight_multiplier });
        cursor = p.end.min(horizon);
    }
    if cursor < horizon {
        tiled.push(WeatherPhase { start: cursor, end: horizon, weight_multiplier: 1.0 });
    }
    Ok(tiled)
}

fn phase_index(phases: &[WeatherPhase], t: u64) -> usize {
    phases
        .iter()
        .position(|p| t >= p.start && t < p.end)
        .unwrap_or(phases.len() - 1)
}

fn build_profile(
    classes: &[ClassSpec],
    weather: &[WeatherPhase],
    horizon: u64,
    bin_width: u64,
) -> PadWeightProfile {
    let bins = horizon.div_ceil(bin_width) as usize;
    let weights = classes
        .iter()
        .map(|c| {
            (0..bins)
                .map(|b| {
                    let bin_start = b as u64 * bin_width;
                    c.base_weight * weather[phase_index(weather, bin_start)].weight_multiplier
                })
                .collect()
        })
        .collect();
    PadWeightProfile { bin_width, weights }
}

/// Poisson arrivals per class via exponential inter-arrival times, one shared
/// ChaCha stream consumed in ascending class order. Pure in (classes, seed).
fn generate_requests(classes: &[ClassSpec], horizon: u64, seed: u64) -> Vec<UavRequest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut requests: Vec<UavRequest> = Vec::new();
    for c in classes {
        if c.rate <= 0.0 {
            continue;
        }
        let mut t = 0.0f64;
        loop {
            let u: f64 = rng.gen::<f64>();
            t += -(1.0 - u).ln() / c.rate;
            let release = t.floor() as u64;
            if !(t.is_finite()) || release >= horizon {
                break;
            }
            requests.push(UavRequest {
                id: 0,
                class_id: c.class_id,
                release_time: release,
                service_demand: c.service_demand,
                priority_tag: PriorityTag::Normal,
            });
        }
    }
    requests.sort_by_key(|r| (r.release_time, r.class_id));
    for (i, r) in requests.iter_mut().enumerate() {
        r.id = i as u32;
    }
    requests
}

/// Builds a scenario from a generation spec; deterministic in (spec, seed).
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Scenario> {
    Scenario::from_spec(spec)
}

/// The reference desk-scale scenario: three classes, one hour, roughly 500
/// requests, with a doubled-weight weather phase over the second half.
pub fn reference_desk_spec(seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        horizon: 3600,
        seed,
        bin_width: 60,
        classes: vec![
            ClassSpec { class_id: 1, rate: 0.080, pad_count: 3, separation: 0, service_demand: 30, base_weight: 1.0 },
            ClassSpec { class_id: 2, rate: 0.030, pad_count: 1, separation: 0, service_demand: 30, base_weight: 2.0 },
            ClassSpec { class_id: 3, rate: 0.020, pad_count: 1, separation: 0, service_demand: 30, base_weight: 4.0 },
        ],
        weather: vec![WeatherPhase { start: 1800, end: 3600, weight_multiplier: 2.0 }],
        requests: None,
    }
}

/// Parses and validates a scenario document.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let spec: ScenarioSpec = serde_json::from_str(&text).map_err(|e| Error::Schema {
        line: Some(e.line()),
        message: e.to_string(),
    })?;
    Scenario::from_spec(&spec)
}

/// Writes a scenario as a canonical document with an explicit request list,
/// so `load(save(s)) == s`.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_document(scenario))?;
    Ok(())
}

/// Canonical serialized form of a scenario.
pub fn scenario_document(scenario: &Scenario) -> String {
    let spec = ScenarioSpec {
        horizon: scenario.horizon,
        seed: scenario.seed,
        bin_width: scenario.pad_weights.bin_width,
        classes: scenario.classes.clone(),
        weather: scenario.weather.clone(),
        requests: Some(scenario.requests.clone()),
    };
    let mut doc = serde_json::to_string_pretty(&spec).expect("scenario serializes");
    doc.push('\n');
    doc
}
