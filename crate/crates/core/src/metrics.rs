//! Wait-time statistics, tail measures and improvement rates.

use serde::{Deserialize, Serialize};

use crate::cvar;
use crate::error::{Error, Result};
use crate::scenario::Scenario;
use crate::schedule::Schedule;

/// Waits above this many seconds count as "long" (the >2 min table column).
pub const LONG_WAIT_THRESHOLD: u64 = 120;

/// Per-request waits in seconds, aligned with `scenario.requests`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitVector {
    pub waits: Vec<u64>,
}

impl WaitVector {
    pub fn as_f64(&self) -> Vec<f64> {
        self.waits.iter().map(|&w| w as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricVector {
    pub avg_wait: f64,
    pub max_wait: f64,
    pub std_wait: f64,
    /// CVaR_0.95 of the waits (dominates the plain 95th percentile).
    pub tail_95: f64,
    pub pct_no_wait: f64,
    pub pct_long_wait: f64,
    pub penalty_total: f64,
    /// Departures per hour over the horizon.
    pub throughput: f64,
}

/// Metric names used by improvement tables and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    AvgWait,
    MaxWait,
    StdWait,
    Tail95,
    PctNoWait,
    PctLongWait,
    PenaltyTotal,
    Throughput,
}

impl MetricName {
    pub const ALL: [MetricName; 8] = [
        MetricName::AvgWait,
        MetricName::MaxWait,
        MetricName::StdWait,
        MetricName::Tail95,
        MetricName::PctNoWait,
        MetricName::PctLongWait,
        MetricName::PenaltyTotal,
        MetricName::Throughput,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetricName::AvgWait => "avg_wait",
            MetricName::MaxWait => "max_wait",
            MetricName::StdWait => "std_wait",
            MetricName::Tail95 => "tail_95",
            MetricName::PctNoWait => "pct_no_wait",
            MetricName::PctLongWait => "pct_long_wait",
            MetricName::PenaltyTotal => "penalty_total",
            MetricName::Throughput => "throughput",
        }
    }

    /// Whether larger values are better (sign convention of the tables).
    pub fn benefit_like(self) -> bool {
        matches!(self, MetricName::PctNoWait | MetricName::Throughput)
    }

    pub fn get(self, m: &MetricVector) -> f64 {
        match self {
            MetricName::AvgWait => m.avg_wait,
            MetricName::MaxWait => m.max_wait,
            MetricName::StdWait => m.std_wait,
            MetricName::Tail95 => m.tail_95,
            MetricName::PctNoWait => m.pct_no_wait,
            MetricName::PctLongWait => m.pct_long_wait,
            MetricName::PenaltyTotal => m.penalty_total,
            MetricName::Throughput => m.throughput,
        }
    }
}

impl std::str::FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.label() == s)
            .ok_or_else(|| Error::Argument(format!("unknown metric `{s}`")))
    }
}

/// Exact sample statistics over the wait vector plus the weighted penalty.
///
/// `pct_no_wait` counts strict zeros; `pct_long_wait` counts waits above
/// 120 s; `penalty_total` sums `w_k(start) * wait` per take-off, with
/// past-horizon starts clamped into the final weight bin.
pub fn compute_metrics(
    waits: &WaitVector,
    schedule: &Schedule,
    scenario: &Scenario,
) -> Result<MetricVector> {
    let n = waits.waits.len();
    if n == 0 {
        return Err(Error::Argument("metrics undefined for empty wait vector".into()));
    }
    debug_assert_eq!(schedule.slots.len(), n);

    let sum: u128 = waits.waits.iter().map(|&w| w as u128).sum();
    let avg = sum as f64 / n as f64;
    let max = *waits.waits.iter().max().expect("nonempty") as f64;
    let var = waits
        .waits
        .iter()
        .map(|&w| {
            let d = w as f64 - avg;
            d * d
        })
        .sum::<f64>()
        / n as f64;
    let no_wait = waits.waits.iter().filter(|&&w| w == 0).count();
    let long_wait = waits
        .waits
        .iter()
        .filter(|&&w| w > LONG_WAIT_THRESHOLD)
        .count();

    let mut penalty = 0.0;
    for (slot, &w) in schedule.slots.iter().zip(&waits.waits) {
        penalty += scenario.pad_weight_clamped(slot.class_id, slot.start) * w as f64;
    }

    let in_horizon = schedule
        .slots
        .iter()
        .filter(|s| s.start < scenario.horizon)
        .count();

    Ok(MetricVector {
        avg_wait: avg,
        max_wait: max,
        std_wait: var.sqrt(),
        tail_95: tail_95(waits)?,
        pct_no_wait: no_wait as f64 / n as f64,
        pct_long_wait: long_wait as f64 / n as f64,
        penalty_total: penalty,
        throughput: in_horizon as f64 * 3600.0 / scenario.horizon as f64,
    })
}

/// CVaR_0.95 of the waits: mean of the worst `ceil(0.05 n)` samples.
pub fn tail_95(waits: &WaitVector) -> Result<f64> {
    if waits.waits.is_empty() {
        return Err(Error::Argument("tail undefined for empty wait vector".into()));
    }
    Ok(cvar::cvar_sorted_tail(&waits.as_f64(), 0.95))
}

/// Plain empirical 95th percentile, kept next to the CVaR for diagnostics.
pub fn quantile_95(waits: &WaitVector) -> Result<f64> {
    if waits.waits.is_empty() {
        return Err(Error::Argument("quantile undefined for empty wait vector".into()));
    }
    Ok(cvar::quantile(&waits.as_f64(), 0.95))
}

/// Improvement of `candidate` over `baseline` in percent, positive = better.
pub fn improvement_rate(
    baseline: &MetricVector,
    candidate: &MetricVector,
    metric: MetricName,
) -> Result<f64> {
    let base = metric.get(baseline);
    let cand = metric.get(candidate);
    if base == 0.0 {
        return Err(Error::Argument(format!(
            "improvement rate undefined: baseline {} is zero",
            metric.label()
        )));
    }
    let rate = if metric.benefit_like() {
        (cand - base) / base * 100.0
    } else {
        (base - cand) / base * 100.0
    };
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_scenario, ClassSpec, ScenarioSpec, UavRequest};
    use crate::schedule::TakeoffSlot;

    fn tiny_scenario(n: usize) -> Scenario {
        let spec = ScenarioSpec {
            horizon: 10_000,
            seed: 0,
            bin_width: 60,
            classes: vec![ClassSpec {
                class_id: 1,
                rate: 0.0,
                pad_count: 1,
                separation: 0,
                service_demand: 30,
                base_weight: 1.0,
            }],
            weather: vec![],
            requests: Some(
                (0..n)
                    .map(|i| UavRequest {
                        id: i as u32,
                        class_id: 1,
                        release_time: 0,
                        service_demand: 30,
                        priority_tag: Default::default(),
                    })
                    .collect(),
            ),
        };
        generate_scenario(&spec).unwrap()
    }

    fn schedule_for(waits: &[u64]) -> Schedule {
        Schedule {
            slots: waits
                .iter()
                .enumerate()
                .map(|(i, &w)| TakeoffSlot {
                    request_id: i as u32,
                    class_id: 1,
                    pad: 0,
                    start: w,
                    service_end: w + 30,
                })
                .collect(),
        }
    }

    #[test]
    fn all_zero_waits() {
        let waits = WaitVector { waits: vec![0, 0, 0] };
        let m = compute_metrics(&waits, &schedule_for(&waits.waits), &tiny_scenario(3)).unwrap();
        assert_eq!(m.avg_wait, 0.0);
        assert_eq!(m.max_wait, 0.0);
        assert_eq!(m.pct_no_wait, 1.0);
        assert_eq!(m.pct_long_wait, 0.0);
        assert_eq!(m.penalty_total, 0.0);
    }

    #[test]
    fn long_wait_counting() {
        let waits = WaitVector { waits: vec![0, 0, 121] };
        let m = compute_metrics(&waits, &schedule_for(&waits.waits), &tiny_scenario(3)).unwrap();
        assert!((m.pct_no_wait - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.pct_long_wait - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.max_wait, 121.0);
        // 120 exactly is not "long"
        let waits = WaitVector { waits: vec![120] };
        let m = compute_metrics(&waits, &schedule_for(&waits.waits), &tiny_scenario(1)).unwrap();
        assert_eq!(m.pct_long_wait, 0.0);
    }

    #[test]
    fn empty_waits_error() {
        let waits = WaitVector { waits: vec![] };
        assert!(compute_metrics(&waits, &Schedule::default(), &tiny_scenario(1)).is_err());
        assert!(tail_95(&waits).is_err());
    }

    #[test]
    fn avg_times_n_is_exact_sum() {
        let waits = WaitVector { waits: vec![3, 17, 120, 0, 55, 1000] };
        let m = compute_metrics(&waits, &schedule_for(&waits.waits), &tiny_scenario(6)).unwrap();
        let sum: u64 = waits.waits.iter().sum();
        assert_eq!(m.avg_wait * 6.0, sum as f64);
    }

    #[test]
    fn improvement_rate_sign_convention() {
        let mut base = MetricVector {
            avg_wait: 10.0,
            max_wait: 738.0,
            std_wait: 1.0,
            tail_95: 1.0,
            pct_no_wait: 0.60,
            pct_long_wait: 0.0031,
            penalty_total: 1.0,
            throughput: 100.0,
        };
        let mut cand = base;
        cand.max_wait = 298.0;
        let r = improvement_rate(&base, &cand, MetricName::MaxWait).unwrap();
        assert!((r - 59.62059620596206).abs() < 1e-9, "got {r}");

        // worse long-wait share shows as a large negative rate
        cand = base;
        cand.pct_long_wait = 0.0124;
        let r = improvement_rate(&base, &cand, MetricName::PctLongWait).unwrap();
        assert!((r - -300.0).abs() < 1e-9, "got {r}");

        // identical vectors: zero on every metric
        for m in MetricName::ALL {
            assert_eq!(improvement_rate(&base, &base, m).unwrap(), 0.0);
        }

        base.max_wait = 0.0;
        assert!(improvement_rate(&base, &cand, MetricName::MaxWait).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let a = WaitVector { waits: vec![5, 0, 130, 7, 7] };
        let b = WaitVector { waits: vec![130, 7, 5, 7, 0] };
        let sa = schedule_for(&a.waits);
        let sb = schedule_for(&b.waits);
        let sc = tiny_scenario(5);
        let ma = compute_metrics(&a, &sa, &sc).unwrap();
        let mb = compute_metrics(&b, &sb, &sc).unwrap();
        assert_eq!(ma.avg_wait, mb.avg_wait);
        assert_eq!(ma.max_wait, mb.max_wait);
        assert_eq!(ma.std_wait, mb.std_wait);
        assert_eq!(ma.tail_95, mb.tail_95);
        assert_eq!(ma.pct_no_wait, mb.pct_no_wait);
        assert_eq!(ma.pct_long_wait, mb.pct_long_wait);
    }
}
