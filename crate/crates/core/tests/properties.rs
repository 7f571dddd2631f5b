use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ucap::adequacy::{simulate_conventional_availability, GeneratorClass};
use ucap::dispatch::{explicit_fractions, optimal_step, recharge_step, Policy, RechargeBasis};
use ucap::ep_analysis::{capacity_curve, ep_transform, max_energy_gap};
use ucap::fleet::{apply_input, Device, Fleet, FleetState};
use ucap::oracle::min_ens_oracle;
use ucap::signals::{cap_signal, signal_energy, StepSignal};
use ucap::simulate::{ens_of_run, run_dispatch, RunOptions};

fn fleet_strategy() -> impl Strategy<Value = Fleet> {
    prop::collection::vec(
        (
            0.5..10.0f64,
            0.0..5.0f64,
            0.0..3.0f64,
            0.5..10.0f64,
            0.5..=1.0f64,
        ),
        1..=5,
    )
    .prop_map(|specs| {
        let devices = specs
            .into_iter()
            .enumerate()
            .map(|(i, (p, x, headroom, charge, eta))| {
                Device::new(format!("d{i}"), p, p * x, p * (x + headroom)).with_charge(-charge, eta)
            })
            .collect();
        Fleet::validated(devices).unwrap()
    })
}

fn signal_strategy(low: f64, high: f64) -> impl Strategy<Value = StepSignal> {
    prop::collection::vec((0.25..3.0f64, low..high), 1..=8).prop_map(|steps| {
        let mut breakpoints = vec![0.0];
        let mut values = Vec::new();
        for (dt, v) in steps {
            breakpoints.push(breakpoints.last().unwrap() + dt);
            values.push(v);
        }
        StepSignal::new(breakpoints, values).unwrap()
    })
}

fn close(a: f64, b: f64, eps: f64) -> bool {
    (a - b).abs() <= eps * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ep_curve_is_convex_and_decreasing(s in signal_strategy(0.0, 25.0)) {
        let e = ep_transform(&s).unwrap();
        prop_assert!(e.is_well_formed());
        prop_assert!(close(e.eval(0.0), signal_energy(&s), 1e-12));
        prop_assert_eq!(e.eval(s.peak()), 0.0);
    }

    #[test]
    fn capping_subtracts_the_energy_above(s in signal_strategy(0.0, 25.0), frac in 0.0..1.0f64) {
        let level = frac * s.peak();
        let e = ep_transform(&s).unwrap();
        let capped = ep_transform(&cap_signal(&s, level)).unwrap();
        let above = e.eval(level);
        for p in e.powers().chain(capped.powers()) {
            prop_assert!(close(capped.eval(p), (e.eval(p) - above).max(0.0), 1e-9));
        }
    }

    #[test]
    fn signal_energy_is_additive(s in signal_strategy(-10.0, 25.0), cut in 0usize..8) {
        let k = cut.min(s.len());
        let parts = signal_energy(&s.slice_steps(0, k)) + signal_energy(&s.slice_steps(k, s.len()));
        prop_assert!(close(parts, signal_energy(&s), 1e-12));
    }

    #[test]
    fn signal_csv_round_trips(s in signal_strategy(-10.0, 25.0)) {
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        prop_assert_eq!(StepSignal::from_csv_reader(buf.as_slice(), None).unwrap(), s);
    }

    #[test]
    fn fleet_csv_round_trips(fleet in fleet_strategy()) {
        let mut buf = Vec::new();
        fleet.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Fleet::from_csv_reader(buf.as_slice()).unwrap(), fleet);
    }

    #[test]
    fn optimal_run_bookkeeping(fleet in fleet_strategy(), s in signal_strategy(0.0, 25.0)) {
        let start = fleet.initial_state();
        let trace = run_dispatch(&fleet, &start, &s, Policy::Optimal, RunOptions::default()).unwrap();
        for step in &trace.steps {
            prop_assert!(step.ens_kwh >= 0.0);
            prop_assert!(step.served_kw <= step.request_kw + 1e-9);
            for (u, d) in step.u.iter().zip(&fleet.devices) {
                prop_assert!(*u >= 0.0 && *u <= d.max_discharge + 1e-9);
            }
            prop_assert!(step.x_after.iter().all(|&x| x >= 0.0));
        }
        let end = FleetState::new(trace.final_state().to_vec());
        let used = start.total_energy(&fleet) - end.total_energy(&fleet);
        prop_assert!(close(used, trace.total_served_kwh, 1e-9));
        prop_assert!(close(trace.total_served_kwh + trace.total_ens_kwh, signal_energy(&s), 1e-9));
    }

    #[test]
    fn optimal_matches_oracle_and_gap(fleet in fleet_strategy(), s in signal_strategy(0.0, 25.0)) {
        let state = fleet.initial_state();
        let simulated = ens_of_run(&run_dispatch(&fleet, &state, &s, Policy::Optimal, RunOptions::default()).unwrap());
        let oracle = min_ens_oracle(&fleet, &state, &s);
        let gap = max_energy_gap(&ep_transform(&s).unwrap(), &capacity_curve(&fleet, &state).unwrap());
        prop_assert!(close(simulated, oracle, 1e-7), "simulated {} oracle {}", simulated, oracle);
        prop_assert!(close(gap, oracle, 1e-7), "gap {} oracle {}", gap, oracle);
        for policy in [Policy::Lpf, Policy::Pop, Policy::Pd, Policy::PeakShaving] {
            let other = ens_of_run(&run_dispatch(&fleet, &state, &s, policy, RunOptions::default()).unwrap());
            prop_assert!(oracle <= other + 1e-7 * other.max(1.0), "{} below the oracle", policy);
        }
    }

    #[test]
    fn optimal_step_keeps_time_to_go_order(fleet in fleet_strategy(), request in 0.0..40.0f64, dt in 0.1..3.0f64) {
        let state = fleet.initial_state();
        let d = optimal_step(&state, &fleet, request, dt).unwrap();
        let next = apply_input(&state, &fleet, &d.u, dt).unwrap();
        for i in 0..fleet.len() {
            for j in 0..fleet.len() {
                if state.x[i] <= state.x[j] {
                    prop_assert!(next.x[i] <= next.x[j] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn fractions_load_longest_first(fleet in fleet_strategy(), request in 0.0..40.0f64) {
        let state = fleet.initial_state();
        let u = explicit_fractions(&state, &fleet, request).unwrap();
        let live: f64 = fleet.devices.iter().zip(&state.x)
            .filter(|(_, &x)| x > 1e-9)
            .map(|(d, _)| d.max_discharge)
            .sum();
        let total: f64 = u.iter().sum();
        prop_assert!(total <= request + 1e-9);
        prop_assert!(total <= live + 1e-9);
        for i in 0..fleet.len() {
            for j in 0..fleet.len() {
                // a device only runs below full power if every longer one is at full power
                let full_j = (u[j] - fleet.devices[j].max_discharge).abs() <= 1e-9;
                if state.x[j] > state.x[i] + 1e-6 && u[i] > 0.0 && state.x[j] > 1e-9 {
                    prop_assert!(full_j);
                }
            }
        }
    }

    #[test]
    fn recharge_stays_in_bounds(fleet in fleet_strategy(), surplus in 0.0..40.0f64, dt in 0.1..3.0f64) {
        let state = fleet.initial_state();
        let d = recharge_step(&state, &fleet, -surplus, dt, RechargeBasis::Stored).unwrap();
        let next = apply_input(&state, &fleet, &d.u, dt).unwrap();
        let mut room = 0.0;
        for (i, dev) in fleet.devices.iter().enumerate() {
            prop_assert!(d.u[i] <= 0.0 && d.u[i] >= dev.max_charge - 1e-9);
            prop_assert!(next.x[i] >= state.x[i] && next.x[i] <= dev.max_time_to_go() + 1e-12);
            let reach = (state.x[i] - dev.efficiency * dev.max_charge * dt / dev.max_discharge)
                .min(dev.max_time_to_go());
            room += dev.max_discharge * (reach - state.x[i]);
        }
        // stored energy rises by the offered energy, or as far as it can
        let gained = next.total_energy(&fleet) - state.total_energy(&fleet);
        prop_assert!(close(gained, (surplus * dt).min(room), 1e-9), "gained {} room {}", gained, room);
    }

    #[test]
    fn availability_is_bounded(seed in 0u64..1000, count in 1usize..6, a in 0.5..0.99f64) {
        let class = GeneratorClass { unit_capacity_mw: 25.0, unit_count: count, availability: a, mtbf_h: 300.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cap = simulate_conventional_availability(&[class], 500, &mut rng).unwrap();
        prop_assert_eq!(cap.len(), 500);
        for v in cap {
            prop_assert!((0.0..=25.0 * count as f64).contains(&v));
            prop_assert_eq!(v % 25.0, 0.0);
        }
    }
}
