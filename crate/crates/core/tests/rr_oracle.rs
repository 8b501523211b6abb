//! Round-Robin scheduler against an independently written replay oracle.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use vertevo::rr::{rr_run, rr_schedule, DEFAULT_QUANTUM};
use vertevo::scenario::{generate_scenario, ClassSpec, Scenario, ScenarioSpec, UavRequest};

/// Discrete-event replay of the documented Round-Robin semantics, written
/// against different data structures (pad min-heap, indexed cursor queue)
/// so it exercises an independent code path.
fn replay_oracle(scenario: &Scenario, quantum: u64) -> Vec<u64> {
    let n = scenario.requests.len();
    let mut waits = vec![0u64; n];
    for class in &scenario.classes {
        let mut arrivals: Vec<usize> = (0..n)
            .filter(|&i| scenario.requests[i].class_id == class.class_id)
            .collect();
        arrivals.sort_by_key(|&i| (scenario.requests[i].release_time, scenario.requests[i].id));

        // pad pool as a min-heap of (free_time, pad index)
        let mut pads: BinaryHeap<Reverse<(u64, usize)>> = (0..class.pad_count as usize)
            .map(|p| Reverse((0u64, p)))
            .collect();

        // queue entries: (request index, remaining, ready)
        let mut queue: Vec<(usize, u64, u64)> = Vec::new();
        let mut head = 0usize;
        let mut next_arrival = 0usize;
        let mut clock = 0u64;

        loop {
            while next_arrival < arrivals.len()
                && scenario.requests[arrivals[next_arrival]].release_time <= clock
            {
                let i = arrivals[next_arrival];
                queue.push((i, scenario.requests[i].service_demand, scenario.requests[i].release_time));
                next_arrival += 1;
            }
            if head >= queue.len() {
                if next_arrival >= arrivals.len() {
                    break;
                }
                clock = clock.max(scenario.requests[arrivals[next_arrival]].release_time);
                continue;
            }
            let (req_index, remaining, ready) = queue[head];
            head += 1;

            let Reverse((free, pad)) = pads.pop().expect("pad pool nonempty");
            let start = free.max(ready);
            let grant = quantum.min(remaining);
            let end = start + grant;
            pads.push(Reverse((end + class.separation, pad)));

            clock = clock.max(start);
            while next_arrival < arrivals.len()
                && scenario.requests[arrivals[next_arrival]].release_time <= clock
            {
                let i = arrivals[next_arrival];
                queue.push((i, scenario.requests[i].service_demand, scenario.requests[i].release_time));
                next_arrival += 1;
            }

            if remaining <= quantum {
                waits[req_index] = start - scenario.requests[req_index].release_time;
            } else {
                queue.push((req_index, remaining - quantum, end));
            }
        }
    }
    waits
}

/// Independent per-class FIFO earliest-free-pad schedule.
fn fifo_oracle(scenario: &Scenario) -> Vec<u64> {
    let n = scenario.requests.len();
    let mut waits = vec![0u64; n];
    for class in &scenario.classes {
        let mut members: Vec<usize> = (0..n)
            .filter(|&i| scenario.requests[i].class_id == class.class_id)
            .collect();
        members.sort_by_key(|&i| (scenario.requests[i].release_time, scenario.requests[i].id));
        let mut pads = vec![0u64; class.pad_count as usize];
        for i in members {
            let req = &scenario.requests[i];
            let (p, &free) = pads
                .iter()
                .enumerate()
                .min_by_key(|(p, &f)| (f, *p))
                .expect("pad pool nonempty");
            let start = free.max(req.release_time);
            pads[p] = start + req.service_demand + class.separation;
            waits[i] = start - req.release_time;
        }
    }
    waits
}

fn seeded_spec(seed: u64) -> ScenarioSpec {
    // vary demands, separations and pad counts with the seed so requeues
    // and separation handling are exercised
    let demand = [30, 45, 90, 60][seed as usize % 4];
    let sep = [0, 10, 5][seed as usize % 3];
    ScenarioSpec {
        horizon: 1800,
        seed,
        bin_width: 60,
        classes: vec![
            ClassSpec { class_id: 1, rate: 0.06, pad_count: 2 + (seed % 2) as u32, separation: sep, service_demand: demand, base_weight: 1.0 },
            ClassSpec { class_id: 2, rate: 0.03, pad_count: 1, separation: 0, service_demand: 30, base_weight: 2.0 },
            ClassSpec { class_id: 3, rate: 0.015, pad_count: 1, separation: sep, service_demand: demand, base_weight: 4.0 },
        ],
        weather: vec![],
        requests: None,
    }
}

#[test]
fn rr_matches_replay_oracle_on_50_seeded_scenarios() {
    for seed in 0..50u64 {
        let scenario = generate_scenario(&seeded_spec(seed)).unwrap();
        let (_, waits) = rr_schedule(&scenario, DEFAULT_QUANTUM).unwrap();
        let oracle = replay_oracle(&scenario, DEFAULT_QUANTUM);
        assert_eq!(waits.waits, oracle, "seed {seed} diverged from the replay oracle");
    }
}

#[test]
fn rr_average_matches_oracle_on_reference_scenario() {
    let scenario = generate_scenario(&vertevo::scenario::reference_desk_spec(7)).unwrap();
    let (schedule, waits) = rr_schedule(&scenario, DEFAULT_QUANTUM).unwrap();
    let oracle = replay_oracle(&scenario, DEFAULT_QUANTUM);
    let avg = |w: &[u64]| w.iter().sum::<u64>() as f64 / w.len() as f64;
    assert!((avg(&waits.waits) - avg(&oracle)).abs() <= 1.0);
    let m = vertevo::metrics::compute_metrics(&waits, &schedule, &scenario).unwrap();
    assert!((m.avg_wait - avg(&oracle)).abs() <= 1.0);
}

#[test]
fn rr_degenerates_to_fifo_when_demands_fit_the_quantum() {
    for seed in 0..10u64 {
        let mut spec = seeded_spec(seed);
        for c in &mut spec.classes {
            c.service_demand = 10 + (seed % 3) as u64 * 10; // always <= quantum
        }
        let scenario = generate_scenario(&spec).unwrap();
        let (_, waits) = rr_schedule(&scenario, DEFAULT_QUANTUM).unwrap();
        assert_eq!(waits.waits, fifo_oracle(&scenario), "seed {seed}");
    }
}

#[test]
fn no_pad_overlap_and_separation_respected() {
    for seed in [3u64, 8, 13] {
        let scenario = generate_scenario(&seeded_spec(seed)).unwrap();
        let run = rr_run(&scenario, DEFAULT_QUANTUM).unwrap();
        let mut by_pad: std::collections::HashMap<(u32, u32), Vec<(u64, u64)>> = Default::default();
        for g in &run.grants {
            by_pad.entry((g.class_id, g.pad)).or_default().push((g.start, g.end));
        }
        for ((class_id, _), grants) in by_pad.iter_mut() {
            let sep = scenario.class(*class_id).unwrap().separation;
            grants.sort_unstable();
            for w in grants.windows(2) {
                assert!(w[0].1 + sep <= w[1].0, "overlap on class {class_id}");
            }
        }
    }
}

#[test]
fn starvation_freedom_queues_drain() {
    let scenario = generate_scenario(&seeded_spec(2)).unwrap();
    let run = rr_run(&scenario, DEFAULT_QUANTUM).unwrap();
    let total_work: u64 = scenario.requests.iter().map(|r| r.service_demand + 10).sum();
    for slot in &run.schedule.slots {
        assert!(slot.service_end <= scenario.horizon + total_work);
    }
    assert_eq!(run.schedule.slots.len(), scenario.requests.len());
}

/// Between two consecutive grants to a request, every other same-class
/// request that was already waiting gets at least one grant.
#[test]
fn fairness_no_monopolization() {
    // demands of three quanta force requeues
    let spec = ScenarioSpec {
        horizon: 600,
        seed: 5,
        bin_width: 60,
        classes: vec![ClassSpec {
            class_id: 1,
            rate: 0.0,
            pad_count: 1,
            separation: 0,
            service_demand: 90,
            base_weight: 1.0,
        }],
        weather: vec![],
        requests: Some(
            (0..6)
                .map(|i| UavRequest {
                    id: i,
                    class_id: 1,
                    release_time: (i as u64) * 20,
                    service_demand: 90,
                    priority_tag: Default::default(),
                })
                .collect(),
        ),
    };
    let scenario = generate_scenario(&spec).unwrap();
    let run = rr_run(&scenario, 30).unwrap();
    let grants = &run.grants;

    let final_start = |id: u32| {
        grants
            .iter()
            .find(|g| g.request_id == id && g.is_final)
            .map(|g| g.start)
            .expect("every request departs")
    };

    for r in &scenario.requests {
        let positions: Vec<usize> = grants
            .iter()
            .enumerate()
            .filter(|(_, g)| g.request_id == r.id)
            .map(|(i, _)| i)
            .collect();
        for pair in positions.windows(2) {
            let (i, j) = (pair[0], pair[1]);
            for other in &scenario.requests {
                if other.id == r.id {
                    continue;
                }
                let waiting = other.release_time <= grants[i].start
                    && final_start(other.id) > grants[i].start;
                if waiting {
                    let served_between = grants[i + 1..j].iter().any(|g| g.request_id == other.id);
                    assert!(
                        served_between,
                        "request {} starved between grants {i} and {j} of request {}",
                        other.id, r.id
                    );
                }
            }
        }
    }
}
