//! Brute-force minimum energy-not-served by maximum flow.
//!
//! Over a step reference with constant input per step, a discharge schedule
//! is exactly a transportation plan: device `i` ships at most `p̄_i·x_i` kWh
//! in total, at most `p̄_i·Δt_k` kWh into interval `k`, and interval `k`
//! accepts at most `P_k·Δt_k` kWh. The largest deliverable energy is the
//! max flow of that bipartite network, and the minimum ENS is what remains.
//!
//! [`min_ens_oracle`] shares no code with `dispatch` or `ep_analysis`, so
//! it can check both; [`agreement_suite`] runs that three-way comparison.

use std::collections::VecDeque;

use rand::Rng;
use serde::Serialize;

use crate::fleet::{Device, Fleet, FleetState};
use crate::signals::StepSignal;

/// Bipartite source → device → interval → sink network (capacities in kWh).
#[derive(Clone, Debug, PartialEq)]
pub struct FlowInstance {
    /// Source → device edge capacity: stored energy.
    pub device_energy: Vec<f64>,
    /// Interval → sink edge capacity: requested energy.
    pub interval_demand: Vec<f64>,
    /// Device → interval edge capacity: `p̄_i·Δt_k`, indexed `[i][k]`.
    pub link: Vec<Vec<f64>>,
}

impl FlowInstance {
    /// Builds the network; negative request values are treated as zero.
    pub fn new(fleet: &Fleet, state: &FleetState, reference: &StepSignal) -> Self {
        let device_energy = fleet
            .devices
            .iter()
            .zip(&state.x)
            .map(|(d, &x)| (d.max_discharge * x).max(0.0))
            .collect();
        let interval_demand = reference
            .steps()
            .map(|s| s.value.max(0.0) * (s.end - s.start))
            .collect();
        let link = fleet
            .devices
            .iter()
            .map(|d| {
                reference
                    .steps()
                    .map(|s| d.max_discharge * (s.end - s.start))
                    .collect()
            })
            .collect();
        Self {
            device_energy,
            interval_demand,
            link,
        }
    }

    pub fn total_demand(&self) -> f64 {
        self.interval_demand.iter().sum()
    }

    /// Maximum source → sink flow (Edmonds–Karp).
    pub fn max_flow(&self) -> f64 {
        let n = self.device_energy.len();
        let m = self.interval_demand.len();
        let source = 0;
        let sink = n + m + 1;
        let mut net = Network::new(n + m + 2);
        for (i, &e) in self.device_energy.iter().enumerate() {
            net.add_edge(source, 1 + i, e);
            for (k, &c) in self.link[i].iter().enumerate() {
                net.add_edge(1 + i, 1 + n + k, c);
            }
        }
        for (k, &d) in self.interval_demand.iter().enumerate() {
            net.add_edge(1 + n + k, sink, d);
        }
        net.max_flow(source, sink)
    }
}

/// Residual network in adjacency-list form; edges come in (forward, reverse)
/// pairs so `e ^ 1` is the partner of `e`.
struct Network {
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

// residual capacities below this are treated as saturated
const FLOW_EPS: f64 = 1e-12;

impl Network {
    fn new(nodes: usize) -> Self {
        Self {
            head: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: f64) {
        self.head[from].push(self.to.len());
        self.to.push(to);
        self.cap.push(cap);
        self.head[to].push(self.to.len());
        self.to.push(from);
        self.cap.push(0.0);
    }

    fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        loop {
            // BFS for a shortest augmenting path
            let mut via = vec![usize::MAX; self.head.len()];
            let mut queue = VecDeque::from([s]);
            let mut seen = vec![false; self.head.len()];
            seen[s] = true;
            while let Some(v) = queue.pop_front() {
                if v == t {
                    break;
                }
                for &e in &self.head[v] {
                    let w = self.to[e];
                    if !seen[w] && self.cap[e] > FLOW_EPS {
                        seen[w] = true;
                        via[w] = e;
                        queue.push_back(w);
                    }
                }
            }
            if !seen[t] {
                return total;
            }
            let mut push = f64::INFINITY;
            let mut v = t;
            while v != s {
                let e = via[v];
                push = push.min(self.cap[e]);
                v = self.to[e ^ 1];
            }
            let mut v = t;
            while v != s {
                let e = via[v];
                self.cap[e] -= push;
                self.cap[e ^ 1] += push;
                v = self.to[e ^ 1];
            }
            total += push;
        }
    }
}

/// Minimum achievable ENS (kWh) for serving the positive part of
/// `reference` from `state`.
pub fn min_ens_oracle(fleet: &Fleet, state: &FleetState, reference: &StepSignal) -> f64 {
    let inst = FlowInstance::new(fleet, state, reference);
    (inst.total_demand() - inst.max_flow()).max(0.0)
}

/// A small random dispatch problem with integer ratings.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomInstance {
    pub fleet: Fleet,
    pub state: FleetState,
    pub reference: StepSignal,
}

/// Draws up to `max_devices` devices (p̄ in 1..=8 kW, energy in 0..=16 kWh)
/// and up to `max_steps` steps (Δt in {1, 2} h, requests in 0..=20 kW).
pub fn random_instance<R: Rng>(
    rng: &mut R,
    max_devices: usize,
    max_steps: usize,
) -> RandomInstance {
    let n = rng.random_range(1..=max_devices.max(1));
    let devices: Vec<Device> = (0..n)
        .map(|i| {
            let p = rng.random_range(1..=8) as f64;
            let e = rng.random_range(0..=16) as f64;
            Device::new(format!("d{}", i + 1), p, e, e)
        })
        .collect();
    let fleet = Fleet::new(devices);
    let m = rng.random_range(1..=max_steps.max(1));
    let mut breakpoints = vec![0.0];
    let mut values = Vec::with_capacity(m);
    for _ in 0..m {
        let dt = rng.random_range(1..=2) as f64;
        breakpoints.push(breakpoints.last().unwrap() + dt);
        values.push(rng.random_range(0..=20) as f64);
    }
    let reference = StepSignal::new(breakpoints, values).expect("increasing breakpoints");
    let state = fleet.initial_state();
    RandomInstance {
        fleet,
        state,
        reference,
    }
}

/// Outcome of the agreement suite.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AgreementReport {
    pub instances: usize,
    pub passed: usize,
    pub failed: usize,
    pub max_abs_error_kwh: f64,
    pub failures: Vec<String>,
}

/// Checks, on `count` seeded random instances, that the optimal policy's
/// ENS, this oracle and the max energy gap all agree within `tolerance`.
pub fn agreement_suite(seed: u64, count: usize, tolerance: f64) -> crate::Result<AgreementReport> {
    use rand::SeedableRng;

    use crate::dispatch::Policy;
    use crate::ep_analysis::{capacity_curve, ep_transform, max_energy_gap};
    use crate::simulate::{ens_of_run, run_dispatch, RunOptions};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut report = AgreementReport {
        instances: count,
        ..AgreementReport::default()
    };
    for idx in 0..count {
        let inst = random_instance(&mut rng, 4, 6);
        let oracle = min_ens_oracle(&inst.fleet, &inst.state, &inst.reference);
        let trace = run_dispatch(
            &inst.fleet,
            &inst.state,
            &inst.reference,
            Policy::Optimal,
            RunOptions::default(),
        )?;
        let simulated = ens_of_run(&trace);
        let gap = max_energy_gap(
            &ep_transform(&inst.reference)?,
            &capacity_curve(&inst.fleet, &inst.state)?,
        );
        let err = (simulated - oracle).abs().max((gap - oracle).abs());
        report.max_abs_error_kwh = report.max_abs_error_kwh.max(err);
        if err <= tolerance {
            report.passed += 1;
        } else {
            report.failed += 1;
            report.failures.push(format!(
                "instance {idx}: simulated {simulated}, oracle {oracle}, gap {gap}"
            ));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_example() -> (Fleet, StepSignal) {
        let fleet = Fleet::validated(vec![
            Device::new("d1", 2.0, 8.0, 8.0),
            Device::new("d2", 4.0, 12.0, 12.0),
            Device::new("d3", 3.0, 6.0, 6.0),
            Device::new("d4", 7.0, 7.0, 7.0),
        ])
        .unwrap();
        let s = StepSignal::from_samples(&[4.0, 18.0, 12.0, 1.0], 1.0, 0.0).unwrap();
        (fleet, s)
    }

    #[test]
    fn worked_example_is_five() {
        let (fleet, s) = worked_example();
        assert!((min_ens_oracle(&fleet, &fleet.initial_state(), &s) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn feasible_is_zero() {
        let (fleet, _) = worked_example();
        let s = StepSignal::from_samples(&[2.0, 3.0], 1.0, 0.0).unwrap();
        assert_eq!(min_ens_oracle(&fleet, &fleet.initial_state(), &s), 0.0);
        assert_eq!(
            min_ens_oracle(&fleet, &fleet.initial_state(), &StepSignal::zero()),
            0.0
        );
    }

    #[test]
    fn empty_fleet_serves_nothing() {
        let s = StepSignal::from_samples(&[2.0, 3.0], 1.0, 0.0).unwrap();
        assert_eq!(
            min_ens_oracle(&Fleet::default(), &FleetState::new(vec![]), &s),
            5.0
        );
    }

    #[test]
    fn suite_agrees_on_small_sample() {
        let report = agreement_suite(7, 50, 1e-6).unwrap();
        assert_eq!(report.failed, 0, "{:?}", report.failures);
        assert_eq!(report.passed, 50);
    }

    #[test]
    fn hand_solved_transport() {
        // one 1 kW device with 1 kWh against 2 kW for 1 h
        let fleet = Fleet::validated(vec![Device::new("a", 1.0, 1.0, 1.0)]).unwrap();
        let s = StepSignal::new(vec![0.0, 1.0], vec![2.0]).unwrap();
        assert_eq!(min_ens_oracle(&fleet, &fleet.initial_state(), &s), 1.0);
        // a long step lets a slow device deliver its whole store
        let fleet = Fleet::validated(vec![Device::new("a", 1.0, 3.0, 3.0)]).unwrap();
        let s = StepSignal::new(vec![0.0, 4.0], vec![1.0]).unwrap();
        assert_eq!(min_ens_oracle(&fleet, &fleet.initial_state(), &s), 1.0);
    }
}
