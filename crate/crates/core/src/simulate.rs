//! Stepping a fleet through a reference trace.
//!
//! Requests in one trace are signed: positive values are shortfalls the
//! fleet should cover, negative values are surplus it may charge from, and
//! zero is idle.

use std::io::Write;

use serde::Serialize;

use crate::dispatch::{
    optimal_step, peak_shaving_schedule, recharge_step, DispatchResult, Policy, RechargeBasis,
};
use crate::fleet::{apply_input, Fleet, FleetState};
use crate::signals::StepSignal;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Route negative requests to the recharge policy (otherwise idle).
    pub recharge: bool,
    pub recharge_basis: RechargeBasis,
}

impl RunOptions {
    pub fn with_recharge() -> Self {
        Self {
            recharge: true,
            ..Self::default()
        }
    }
}

/// Result of a single interval.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub dispatch: DispatchResult,
    /// max{request − served, 0}·Δt (kWh).
    pub ens: f64,
}

/// Causal, step-by-step dispatcher that owns the fleet state.
#[derive(Clone, Debug)]
pub struct StreamingDispatcher<'a> {
    fleet: &'a Fleet,
    state: FleetState,
    policy: Policy,
    options: RunOptions,
}

impl<'a> StreamingDispatcher<'a> {
    pub fn new(
        fleet: &'a Fleet,
        state: FleetState,
        policy: Policy,
        options: RunOptions,
    ) -> Result<Self> {
        if !policy.is_causal() {
            return Err(Error::StreamingNonCausal);
        }
        state.check_against(fleet)?;
        Ok(Self {
            fleet,
            state,
            policy,
            options,
        })
    }

    pub fn state(&self) -> &FleetState {
        &self.state
    }

    pub fn into_state(self) -> FleetState {
        self.state
    }

    /// Serves `request` kW for `dt` hours.
    pub fn step(&mut self, request: f64, dt: f64) -> Result<StepOutcome> {
        let (outcome, next) = step_with(
            self.fleet,
            &self.state,
            request,
            request,
            dt,
            self.policy,
            self.options,
        )?;
        self.state = next;
        Ok(outcome)
    }
}

/// One interval: `target` is what the discharge policy is asked to serve,
/// `request` is what ENS is measured against (they differ only when the
/// target has been capped in advance).
fn step_with(
    fleet: &Fleet,
    state: &FleetState,
    request: f64,
    target: f64,
    dt: f64,
    policy: Policy,
    options: RunOptions,
) -> Result<(StepOutcome, FleetState)> {
    let dispatch = if target > 0.0 {
        match policy {
            Policy::PeakShaving => optimal_step(state, fleet, target, dt)?,
            p => p.discharge_step(state, fleet, target, dt)?,
        }
    } else if target < 0.0 && options.recharge {
        if state.is_full(fleet) {
            idle(fleet)
        } else {
            recharge_step(state, fleet, target, dt, options.recharge_basis)?
        }
    } else {
        idle(fleet)
    };
    let next = if dispatch.u.iter().all(|&u| u == 0.0) {
        state.clone()
    } else {
        apply_input(state, fleet, &dispatch.u, dt)?
    };
    let ens = (request - dispatch.served).max(0.0) * dt;
    Ok((StepOutcome { dispatch, ens }, next))
}

fn idle(fleet: &Fleet) -> DispatchResult {
    DispatchResult {
        u: vec![0.0; fleet.len()],
        served: 0.0,
        z_hat: None,
    }
}

/// One row of a [`RunTrace`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub dt: f64,
    pub request_kw: f64,
    pub served_kw: f64,
    pub ens_kwh: f64,
    pub z_hat: Option<f64>,
    pub u: Vec<f64>,
    pub x_after: Vec<f64>,
}

/// Full record of a dispatch run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunTrace {
    pub policy: Policy,
    pub device_ids: Vec<String>,
    pub initial: FleetState,
    pub steps: Vec<StepRecord>,
    pub total_ens_kwh: f64,
    pub total_served_kwh: f64,
}

impl RunTrace {
    /// State at the start of step `k`.
    pub fn state_before(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.initial.x
        } else {
            &self.steps[k - 1].x_after
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.state_before(self.steps.len())
    }

    /// ENS accumulated up to the end of each step.
    pub fn cumulative_ens(&self) -> Vec<f64> {
        self.steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s.ens_kwh;
                Some(*acc)
            })
            .collect()
    }

    /// Writes `t,request_kw,served_kw,ens_kwh,u_<id>...,x_<id>...`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec![
            "t".to_string(),
            "request_kw".into(),
            "served_kw".into(),
            "ens_kwh".into(),
        ];
        header.extend(self.device_ids.iter().map(|id| format!("u_{id}")));
        header.extend(self.device_ids.iter().map(|id| format!("x_{id}")));
        wtr.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![
                s.t.to_string(),
                s.request_kw.to_string(),
                s.served_kw.to_string(),
                s.ens_kwh.to_string(),
            ];
            row.extend(s.u.iter().map(f64::to_string));
            row.extend(s.x_after.iter().map(f64::to_string));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Runs `policy` over every step of `reference`.
///
/// `peak_shaving` plans each stretch of non-negative requests in advance
/// (the whole trace when recharging is off) and serves the capped stretch
/// with the optimal step.
pub fn run_dispatch(
    fleet: &Fleet,
    initial: &FleetState,
    reference: &StepSignal,
    policy: Policy,
    options: RunOptions,
) -> Result<RunTrace> {
    initial.check_against(fleet)?;
    let values = reference.values();
    let n = values.len();
    let charges = |k: usize| options.recharge && values[k] < 0.0;

    let mut state = initial.clone();
    let mut steps = Vec::with_capacity(n);
    let mut k = 0;
    while k < n {
        // a stretch of steps sharing one plan
        let end = if charges(k) {
            k + 1
        } else {
            (k..n).find(|&j| charges(j)).unwrap_or(n)
        };
        let plan = if policy == Policy::PeakShaving && !charges(k) {
            let stretch = reference.slice_steps(k, end).map_values(|v| v.max(0.0));
            Some(peak_shaving_schedule(fleet, &state, &stretch)?.capped)
        } else {
            None
        };
        for (j, step) in reference.steps().enumerate().take(end).skip(k) {
            let target = match &plan {
                Some(capped) => capped.values()[j - k],
                None => step.value,
            };
            let (outcome, next) = step_with(
                fleet,
                &state,
                step.value,
                target,
                step.duration(),
                policy,
                options,
            )?;
            state = next;
            steps.push(StepRecord {
                t: step.start,
                dt: step.duration(),
                request_kw: step.value,
                served_kw: outcome.dispatch.served,
                ens_kwh: outcome.ens,
                z_hat: outcome.dispatch.z_hat,
                u: outcome.dispatch.u,
                x_after: state.x.clone(),
            });
        }
        k = end;
    }

    let total_ens_kwh = steps.iter().map(|s| s.ens_kwh).sum();
    let total_served_kwh = steps.iter().map(|s| s.served_kw * s.dt).sum();
    Ok(RunTrace {
        policy,
        device_ids: fleet.devices.iter().map(|d| d.id.clone()).collect(),
        initial: initial.clone(),
        steps,
        total_ens_kwh,
        total_served_kwh,
    })
}

/// Total energy-not-served of a run (kWh).
pub fn ens_of_run(trace: &RunTrace) -> f64 {
    trace.steps.iter().map(|s| s.ens_kwh).sum()
}

/// A maximal run of steps with positive request.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShortfallEvent {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub ens_kwh: f64,
    pub fully_charged_at_start: bool,
}

pub fn segment_events(trace: &RunTrace, fleet: &Fleet) -> Vec<ShortfallEvent> {
    let mut events = Vec::new();
    let n = trace.steps.len();
    let mut k = 0;
    while k < n {
        if trace.steps[k].request_kw <= 0.0 {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && trace.steps[k].request_kw > 0.0 {
            k += 1;
        }
        let before = FleetState::new(trace.state_before(start).to_vec());
        events.push(ShortfallEvent {
            start,
            end: k,
            ens_kwh: trace.steps[start..k].iter().map(|s| s.ens_kwh).sum(),
            fully_charged_at_start: before.is_full(fleet),
        });
    }
    events
}

/// Scalar summary of a run, for JSON output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub policy: Policy,
    pub steps: usize,
    pub request_energy_kwh: f64,
    pub served_energy_kwh: f64,
    pub ens_kwh: f64,
    pub events: usize,
    pub events_fully_charged_at_start: usize,
    pub final_state_h: Vec<f64>,
}

impl RunSummary {
    pub fn of(trace: &RunTrace, fleet: &Fleet) -> Self {
        let events = segment_events(trace, fleet);
        Self {
            policy: trace.policy,
            steps: trace.steps.len(),
            request_energy_kwh: trace
                .steps
                .iter()
                .map(|s| s.request_kw.max(0.0) * s.dt)
                .sum(),
            served_energy_kwh: trace.total_served_kwh,
            ens_kwh: trace.total_ens_kwh,
            events: events.len(),
            events_fully_charged_at_start: events
                .iter()
                .filter(|e| e.fully_charged_at_start)
                .count(),
            final_state_h: trace.final_state().to_vec(),
        }
    }
}
