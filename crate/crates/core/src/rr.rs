//! Round-Robin baseline scheduler.
//!
//! Requests queue per class (FIFO by release time, then id) and the scheduler
//! cycles the class queues, granting `min(quantum, remaining)` seconds of
//! service per visit on the earliest-free pad of the class and decrementing
//! the remaining demand by one quantum. A request departs on the grant that
//! exhausts its demand; its wait is the start of that final grant minus its
//! release time. Quanta model preparation/clearance slots, so the take-off
//! timestamp is the start of the final grant.
//!
//! Pads are class-dedicated, so class queues never interact and the cycle
//! reduces to independent per-class runs. Determinism rules, all pinned:
//! classes visited in ascending id; FIFO ties broken by release then id;
//! ties between equally free pads broken by lowest pad index; a granted
//! request that still has demand re-queues at the tail after any arrivals
//! released up to the grant start have joined the queue.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::metrics::WaitVector;
use crate::scenario::Scenario;
use crate::schedule::{Schedule, TakeoffSlot};

/// The paper's service quantum.
pub const DEFAULT_QUANTUM: u64 = 30;

/// One service grant (possibly partial) on a pad.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grant {
    pub request_id: u32,
    pub class_id: u32,
    pub pad: u32,
    pub start: u64,
    pub end: u64,
    /// True when this grant completes the request (the take-off itself).
    pub is_final: bool,
}

/// Full trace of a Round-Robin run, for invariant checks.
#[derive(Debug, Clone)]
pub struct RrRun {
    pub schedule: Schedule,
    pub waits: WaitVector,
    pub grants: Vec<Grant>,
}

struct QueueEntry {
    req_index: usize,
    remaining: u64,
    ready: u64,
}

/// Runs Round-Robin with the given quantum; see the module docs for the
/// exact semantics. Total over valid scenarios.
pub fn rr_schedule(scenario: &Scenario, quantum: u64) -> Result<(Schedule, WaitVector)> {
    let run = rr_run(scenario, quantum)?;
    Ok((run.schedule, run.waits))
}

/// As `rr_schedule`, but also returns the grant log.
pub fn rr_run(scenario: &Scenario, quantum: u64) -> Result<RrRun> {
    if quantum == 0 {
        return Err(Error::Argument("quantum must be positive".into()));
    }
    let n = scenario.requests.len();
    let mut slots: Vec<Option<TakeoffSlot>> = vec![None; n];
    let mut waits = vec![0u64; n];
    let mut grants = Vec::new();

    for class in &scenario.classes {
        // Arrivals for this class in FIFO order (requests are sorted by
        // release; ties within equal release keep (class, id) order).
        let mut arrivals: Vec<usize> = (0..n)
            .filter(|&i| scenario.requests[i].class_id == class.class_id)
            .collect();
        arrivals.sort_by_key(|&i| (scenario.requests[i].release_time, scenario.requests[i].id));

        let mut next_arrival = 0usize;
        let mut queue: VecDeque<QueueEntry> = VecDeque::new();
        let mut pads = vec![0u64; class.pad_count as usize];
        let mut clock = 0u64;

        loop {
            while next_arrival < arrivals.len()
                && scenario.requests[arrivals[next_arrival]].release_time <= clock
            {
                let i = arrivals[next_arrival];
                queue.push_back(QueueEntry {
                    req_index: i,
                    remaining: scenario.requests[i].service_demand,
                    ready: scenario.requests[i].release_time,
                });
                next_arrival += 1;
            }
            let Some(entry) = queue.pop_front() else {
                if next_arrival >= arrivals.len() {
                    break;
                }
                clock = clock.max(scenario.requests[arrivals[next_arrival]].release_time);
                continue;
            };

            let pad = pads
                .iter()
                .enumerate()
                .min_by_key(|(i, &free)| (free, *i))
                .map(|(i, _)| i)
                .expect("pad_count >= 1");
            let start = pads[pad].max(entry.ready);
            let grant_len = quantum.min(entry.remaining);
            let end = start + grant_len;
            pads[pad] = end + class.separation;

            clock = clock.max(start);
            while next_arrival < arrivals.len()
                && scenario.requests[arrivals[next_arrival]].release_time <= clock
            {
                let i = arrivals[next_arrival];
                queue.push_back(QueueEntry {
                    req_index: i,
                    remaining: scenario.requests[i].service_demand,
                    ready: scenario.requests[i].release_time,
                });
                next_arrival += 1;
            }

            let req = &scenario.requests[entry.req_index];
            let is_final = entry.remaining <= quantum;
            grants.push(Grant {
                request_id: req.id,
                class_id: class.class_id,
                pad: pad as u32,
                start,
                end,
                is_final,
            });
            if is_final {
                waits[entry.req_index] = start - req.release_time;
                slots[entry.req_index] = Some(TakeoffSlot {
                    request_id: req.id,
                    class_id: class.class_id,
                    pad: pad as u32,
                    start,
                    service_end: end,
                });
            } else {
                queue.push_back(QueueEntry {
                    req_index: entry.req_index,
                    remaining: entry.remaining - quantum,
                    ready: end,
                });
            }
        }
    }

    Ok(RrRun {
        schedule: Schedule {
            slots: slots.into_iter().map(|s| s.expect("all requests served")).collect(),
        },
        waits: WaitVector { waits },
        grants,
    })
}
