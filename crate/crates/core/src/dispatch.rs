//! Dispatch policies.
//!
//! * [`optimal_step`]: the discrete-time ENS-optimal input. It reaches over
//!   one interval exactly the state the continuous fraction law
//!   ([`explicit_fractions`]) would reach, using a constant input.
//! * [`recharge_step`]: fills the devices with the smallest time-to-go first.
//! * [`peak_shaving_schedule`]: caps the whole reference at the level that
//!   makes it just feasible (needs the future).
//! * [`lowest_power_first_step`], [`proportion_of_power_step`] and
//!   [`proportional_discharge_step`]: comparison heuristics. Each device is
//!   bounded per interval by `p̄_i·min{x_i/Δt, 1}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ep_analysis::{capacity_curve, ep_transform, max_energy_gap, shave_level};
use crate::fleet::{Fleet, FleetState};
use crate::signals::StepSignal;
use crate::{tol, Error, Result, TOLERANCE};

/// Per-device input for one interval.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DispatchResult {
    /// Per-device power (kW, discharge positive).
    pub u: Vec<f64>,
    /// Σ max{u_i, 0} (kW).
    pub served: f64,
    /// Threshold time-to-go used by the threshold policies.
    pub z_hat: Option<f64>,
}

impl DispatchResult {
    fn from_u(u: Vec<f64>, z_hat: Option<f64>) -> Self {
        let served = u.iter().map(|v| v.max(0.0)).sum();
        Self { u, served, z_hat }
    }
}

fn check_discharge(state: &FleetState, fleet: &Fleet, request: f64, dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    if !request.is_finite() || request < 0.0 {
        return Err(Error::NegativeRequest(request));
    }
    state.check_against(fleet)
}

/// Energy the fleet releases over `dt` if every device runs down towards the
/// threshold `level`: Σ p̄_i max{min{x_i − level, Δt}, 0}.
fn released_above(state: &FleetState, fleet: &Fleet, level: f64, dt: f64) -> f64 {
    state
        .x
        .iter()
        .zip(fleet.max_powers())
        .map(|(&x, p)| p * (x - level).min(dt).max(0.0))
        .sum()
}

/// Threshold ẑ = inf{x̂ >= 0 : Σ p̄_i max{min{x_i − x̂, Δt}, 0} <= P·Δt}.
///
/// Candidate kinks `{x_i} ∪ {max(x_i − Δt, 0)}` are scanned from the top;
/// the crossing is found by linear interpolation inside the bracketing
/// interval. When the whole accessible energy is at most `P·Δt` the lowest
/// candidate is returned (every device runs flat out).
pub fn z_hat_discharge(state: &FleetState, fleet: &Fleet, request: f64, dt: f64) -> Result<f64> {
    check_discharge(state, fleet, request, dt)?;
    let top = state.x.iter().copied().fold(0.0, f64::max);
    if request == 0.0 || fleet.is_empty() {
        return Ok(top);
    }
    let mut ys: Vec<f64> = state
        .x
        .iter()
        .flat_map(|&x| [x, (x - dt).max(0.0)])
        .collect();
    ys.sort_by(|a, b| b.total_cmp(a));
    ys.dedup();

    let target = request * dt;
    let mut upper = 0.0;
    let mut lower;
    let mut i = 0;
    loop {
        lower = upper;
        upper = released_above(state, fleet, ys[i], dt);
        if upper >= target || i + 1 == ys.len() {
            break;
        }
        i += 1;
    }
    if upper <= target {
        Ok(ys[i])
    } else {
        // i >= 1 here: the first candidate releases nothing
        Ok(ys[i - 1] + (target - lower) / (upper - lower) * (ys[i] - ys[i - 1]))
    }
}

/// Constant input reaching the optimal end-of-interval state:
/// `u_i = p̄_i·max{min{(x_i − ẑ)/Δt, 1}, 0}`.
pub fn optimal_step(
    state: &FleetState,
    fleet: &Fleet,
    request: f64,
    dt: f64,
) -> Result<DispatchResult> {
    let z = z_hat_discharge(state, fleet, request, dt)?;
    let u = state
        .x
        .iter()
        .zip(fleet.max_powers())
        .map(|(&x, p)| p * ((x - z) / dt).clamp(0.0, 1.0))
        .collect();
    Ok(DispatchResult::from_u(u, Some(z)))
}

/// Instantaneous fraction law: devices are grouped by equal time-to-go,
/// groups are loaded in descending order of time-to-go, one group may run
/// at a fraction, and depleted devices are held at zero.
pub fn explicit_fractions(state: &FleetState, fleet: &Fleet, request: f64) -> Result<Vec<f64>> {
    if !request.is_finite() || request < 0.0 {
        return Err(Error::NegativeRequest(request));
    }
    state.check_against(fleet)?;
    let n = fleet.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable: ties keep index order
    order.sort_by(|&a, &b| state.x[b].total_cmp(&state.x[a]));

    let mut u = vec![0.0; n];
    let mut assigned = 0.0;
    let mut start = 0;
    while start < n {
        let lead = state.x[order[start]];
        let mut end = start + 1;
        while end < n && (lead - state.x[order[end]]).abs() <= tol(lead) {
            end += 1;
        }
        let group = &order[start..end];
        let group_power: f64 = group.iter().map(|&i| fleet.devices[i].max_discharge).sum();
        let fraction = if assigned + group_power <= request {
            1.0
        } else if assigned >= request {
            0.0
        } else {
            (request - assigned) / group_power
        };
        assigned += group_power;
        let depleted = lead <= TOLERANCE;
        if !depleted {
            for &i in group {
                u[i] = fraction * fleet.devices[i].max_discharge;
            }
        }
        start = end;
    }
    Ok(u)
}

/// How a negative request is compared with the charge taken in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RechargeBasis {
    /// Stored energy increase is matched to `−P·Δt`. With η < 1 the grid
    /// draw at an interior threshold is `−P/η`.
    #[default]
    Stored,
    /// Grid-side draw `Σ|u_i|` is matched to `−P`.
    Grid,
}

/// Charges towards a common time-to-go level ẑ, filling the emptiest
/// devices first. `request` is the (negative) power available for charging.
pub fn recharge_step(
    state: &FleetState,
    fleet: &Fleet,
    request: f64,
    dt: f64,
    basis: RechargeBasis,
) -> Result<DispatchResult> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    if !request.is_finite() || request > 0.0 {
        return Err(Error::PositiveRequest(request));
    }
    state.check_against(fleet)?;
    let n = fleet.len();
    if n == 0 {
        return Ok(DispatchResult::from_u(vec![], None));
    }
    // highest reachable time-to-go per device this interval
    let reach: Vec<f64> = fleet
        .devices
        .iter()
        .zip(&state.x)
        .map(|(d, &x)| {
            (x - d.efficiency * d.max_charge * dt / d.max_discharge)
                .min(d.max_time_to_go())
                .max(x)
        })
        .collect();
    // energy counted per unit of time-to-go rise, per device
    let weight: Vec<f64> = fleet
        .devices
        .iter()
        .map(|d| match basis {
            RechargeBasis::Stored => d.max_discharge,
            RechargeBasis::Grid => d.max_discharge / d.efficiency,
        })
        .collect();
    let gain = |level: f64| -> f64 {
        weight
            .iter()
            .zip(state.x.iter().zip(&reach))
            .map(|(w, (&x, &r))| w * (level.min(r) - x).max(0.0))
            .sum()
    };
    let budget = -request * dt;

    let mut ys: Vec<f64> = state.x.iter().chain(&reach).copied().collect();
    ys.sort_by(f64::total_cmp);
    ys.dedup();

    let z = if budget == 0.0 {
        ys[0]
    } else {
        let mut upper = 0.0;
        let mut lower;
        let mut i = 0;
        loop {
            lower = upper;
            upper = gain(ys[i]);
            if upper >= budget || i + 1 == ys.len() {
                break;
            }
            i += 1;
        }
        if upper <= budget {
            ys[i]
        } else {
            ys[i - 1] + (budget - lower) / (upper - lower) * (ys[i] - ys[i - 1])
        }
    };

    let u = fleet
        .devices
        .iter()
        .zip(state.x.iter().zip(&reach))
        .map(|(d, (&x, &r))| {
            let rise = (z.min(r) - x).max(0.0);
            if rise == 0.0 {
                0.0
            } else {
                -d.max_discharge / (d.efficiency * dt) * rise
            }
        })
        .collect();
    Ok(DispatchResult::from_u(u, Some(z)))
}

/// Result of [`peak_shaving_schedule`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PeakShavingPlan {
    /// The reference capped at `level_kw`.
    pub capped: StepSignal,
    pub level_kw: f64,
    /// Energy shed by the cap, equal to the minimum ENS (kWh).
    pub expected_ens_kwh: f64,
}

/// Non-causal policy: cap the whole reference at p̃ with E(p̃) = Φ.
pub fn peak_shaving_schedule(
    fleet: &Fleet,
    state: &FleetState,
    reference: &StepSignal,
) -> Result<PeakShavingPlan> {
    let request = ep_transform(reference)?;
    let capacity = capacity_curve(fleet, state)?;
    let gap = max_energy_gap(&request, &capacity);
    let level = shave_level(&request, gap)?;
    Ok(PeakShavingPlan {
        capped: reference.cap(level),
        level_kw: level,
        expected_ens_kwh: gap,
    })
}

/// Interval-limited maximum power of each device: p̄_i·min{x_i/Δt, 1}.
pub fn interval_caps(state: &FleetState, fleet: &Fleet, dt: f64) -> Vec<f64> {
    state
        .x
        .iter()
        .zip(fleet.max_powers())
        .map(|(&x, p)| p * (x / dt).clamp(0.0, 1.0))
        .collect()
}

/// Fills devices in ascending order of p̄ (ties by index) up to their
/// interval-limited caps.
pub fn lowest_power_first_step(
    state: &FleetState,
    fleet: &Fleet,
    request: f64,
    dt: f64,
) -> Result<DispatchResult> {
    check_discharge(state, fleet, request, dt)?;
    let caps = interval_caps(state, fleet, dt);
    let mut order: Vec<usize> = (0..fleet.len()).collect();
    order.sort_by(|&a, &b| {
        fleet.devices[a]
            .max_discharge
            .total_cmp(&fleet.devices[b].max_discharge)
    });
    let mut u = vec![0.0; fleet.len()];
    let mut residual = request;
    for i in order {
        if residual <= 0.0 {
            break;
        }
        u[i] = caps[i].min(residual);
        residual -= u[i];
    }
    Ok(DispatchResult::from_u(u, None))
}

/// Splits `request` in proportion to `weights`, redistributing whatever a
/// device cannot take (because of its cap) over the others until either
/// the request is met or every device with positive weight is capped.
fn proportional_fill(weights: &[f64], caps: &[f64], request: f64) -> Vec<f64> {
    let n = weights.len();
    let mut u = vec![0.0; n];
    let mut active: Vec<usize> = (0..n)
        .filter(|&i| weights[i] > 0.0 && caps[i] > 0.0)
        .collect();
    let mut residual = request.min(active.iter().map(|&i| caps[i]).sum());
    while !active.is_empty() && residual > 0.0 {
        let total: f64 = active.iter().map(|&i| weights[i]).sum();
        let share = residual / total;
        let (capped, free): (Vec<usize>, Vec<usize>) =
            active.iter().partition(|&&i| weights[i] * share >= caps[i]);
        if capped.is_empty() {
            for &i in &free {
                u[i] = weights[i] * share;
            }
            break;
        }
        for &i in &capped {
            u[i] = caps[i];
            residual -= caps[i];
        }
        active = free;
    }
    u
}

/// Shares the request in proportion to p̄ with cap redistribution.
pub fn proportion_of_power_step(
    state: &FleetState,
    fleet: &Fleet,
    request: f64,
    dt: f64,
) -> Result<DispatchResult> {
    check_discharge(state, fleet, request, dt)?;
    let caps = interval_caps(state, fleet, dt);
    let weights: Vec<f64> = fleet.max_powers().collect();
    Ok(DispatchResult::from_u(
        proportional_fill(&weights, &caps, request),
        None,
    ))
}

/// Shares the request in proportion to stored energy p̄·x with cap
/// redistribution.
pub fn proportional_discharge_step(
    state: &FleetState,
    fleet: &Fleet,
    request: f64,
    dt: f64,
) -> Result<DispatchResult> {
    check_discharge(state, fleet, request, dt)?;
    let caps = interval_caps(state, fleet, dt);
    let weights = state.energies(fleet);
    Ok(DispatchResult::from_u(
        proportional_fill(&weights, &caps, request),
        None,
    ))
}

/// Policies selectable by name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Optimal,
    Lpf,
    Pop,
    Pd,
    PeakShaving,
}

impl Policy {
    pub const ALL: [Policy; 5] = [
        Policy::Optimal,
        Policy::Lpf,
        Policy::Pop,
        Policy::Pd,
        Policy::PeakShaving,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Policy::Optimal => "optimal",
            Policy::Lpf => "lpf",
            Policy::Pop => "pop",
            Policy::Pd => "pd",
            Policy::PeakShaving => "peak_shaving",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Policy::Optimal => "Optimal Policy",
            Policy::Lpf => "Lowest Power First",
            Policy::Pop => "Proportion of Power",
            Policy::Pd => "Proportional Discharge",
            Policy::PeakShaving => "Peak Shaving",
        }
    }

    /// Whether the policy decides each interval from the current state alone.
    pub fn is_causal(&self) -> bool {
        !matches!(self, Policy::PeakShaving)
    }

    /// One discharge interval under a causal policy.
    pub fn discharge_step(
        &self,
        state: &FleetState,
        fleet: &Fleet,
        request: f64,
        dt: f64,
    ) -> Result<DispatchResult> {
        match self {
            Policy::Optimal => optimal_step(state, fleet, request, dt),
            Policy::Lpf => lowest_power_first_step(state, fleet, request, dt),
            Policy::Pop => proportion_of_power_step(state, fleet, request, dt),
            Policy::Pd => proportional_discharge_step(state, fleet, request, dt),
            Policy::PeakShaving => Err(Error::StreamingNonCausal),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownPolicy(s.to_string()))
    }
}
