//! E-p transforms and the feasibility results built on them.
//!
//! The E-p transform of a non-negative signal `s` is
//! `E(p) = ∫ max{s(t) − p, 0} dt`: the energy the signal asks for above the
//! power level `p`. It is convex and non-increasing and, for a step signal,
//! exactly piecewise linear with breakpoints at the signal's distinct values.
//!
//! A fleet's capacity curve Ω is the transform of the staircase it can just
//! serve from its current state. The largest excess of a request's curve over
//! Ω is the max energy gap, which equals the minimum achievable
//! energy-not-served.

use serde::Serialize;

use crate::fleet::{Fleet, FleetState};
use crate::signals::StepSignal;
use crate::{le_tol, tol, Error, Result};

/// Convex, non-increasing piecewise-linear curve of energy against power.
///
/// Points are `(p, E)` with increasing `p`, starting at `p = 0` and ending
/// with `E = 0`; `E` is zero beyond the last point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpCurve {
    points: Vec<(f64, f64)>,
}

impl Default for EpCurve {
    fn default() -> Self {
        Self {
            points: vec![(0.0, 0.0)],
        }
    }
}

impl EpCurve {
    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// E(p) for `p >= 0` (negative `p` is treated as 0).
    pub fn eval(&self, p: f64) -> f64 {
        let p = p.max(0.0);
        let pts = &self.points;
        let k = pts.partition_point(|&(q, _)| q <= p);
        if k == pts.len() {
            return 0.0;
        }
        // k >= 1 because pts[0].0 == 0 <= p
        let (p0, e0) = pts[k - 1];
        let (p1, e1) = pts[k];
        e0 + (e1 - e0) * (p - p0) / (p1 - p0)
    }

    /// E(0): the total energy.
    pub fn total_energy(&self) -> f64 {
        self.points[0].1
    }

    /// Smallest power at and above which E vanishes (the signal's peak).
    pub fn peak_power(&self) -> f64 {
        self.points.last().map(|p| p.0).unwrap_or(0.0)
    }

    /// Power levels of all points.
    pub fn powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.0)
    }

    /// Checks the curve invariants on its points: starts at p = 0, increasing
    /// p, E >= 0 and non-increasing, convex, final value 0.
    pub fn is_well_formed(&self) -> bool {
        let pts = &self.points;
        if pts.is_empty() || pts[0].0 != 0.0 || pts.last().unwrap().1 != 0.0 {
            return false;
        }
        if pts
            .iter()
            .any(|&(p, e)| !p.is_finite() || !e.is_finite() || e < 0.0)
        {
            return false;
        }
        let slopes: Vec<f64> = pts
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        pts.windows(2).all(|w| w[1].0 > w[0].0)
            && slopes.iter().all(|&s| s <= tol(s))
            && slopes.windows(2).all(|w| le_tol(w[0], w[1]))
    }

    /// Writes `p_kw,energy_kwh` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["p_kw", "energy_kwh"])?;
        for &(p, e) in &self.points {
            wtr.write_record([p.to_string(), e.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Exact E-p transform of a non-negative step signal.
pub fn ep_transform(s: &StepSignal) -> Result<EpCurve> {
    let mut pieces: Vec<(f64, f64)> = Vec::with_capacity(s.len());
    for step in s.steps() {
        if step.value < 0.0 {
            return Err(Error::NegativeSignal {
                t: step.start,
                value: step.value,
            });
        }
        if step.value > 0.0 {
            pieces.push((step.value, step.duration()));
        }
    }
    Ok(curve_from_levels(pieces))
}

/// Curve of a signal given as (level, total duration) pieces with level > 0.
fn curve_from_levels(mut pieces: Vec<(f64, f64)>) -> EpCurve {
    if pieces.is_empty() {
        return EpCurve::default();
    }
    pieces.sort_by(|a, b| b.0.total_cmp(&a.0));
    // Sweep down from the peak: on (next, level) the set {s > p} has the
    // total duration of every piece at or above `level`.
    let mut points = vec![(pieces[0].0, 0.0)];
    let mut above = 0.0;
    let mut energy = 0.0;
    let mut i = 0;
    while i < pieces.len() {
        let level = pieces[i].0;
        while i < pieces.len() && pieces[i].0 == level {
            above += pieces[i].1;
            i += 1;
        }
        let next = if i < pieces.len() { pieces[i].0 } else { 0.0 };
        energy += above * (level - next);
        points.push((next, energy));
    }
    points.reverse();
    EpCurve { points }
}

/// Capacity curve Ω of `fleet` in `state`: the transform of the staircase
/// `R(t) = Σ p̄_i·1[t < x_i]`.
pub fn capacity_curve(fleet: &Fleet, state: &FleetState) -> Result<EpCurve> {
    state.check_against(fleet)?;
    let mut devices: Vec<(f64, f64)> = state
        .x
        .iter()
        .zip(fleet.max_powers())
        .filter(|(x, _)| **x > 0.0)
        .map(|(&x, p)| (x, p))
        .collect();
    // Descending time-to-go: on [x_(k+1), x_(k)) the first k devices run.
    devices.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut pieces = Vec::with_capacity(devices.len());
    let mut power = 0.0;
    for (k, &(x, p)) in devices.iter().enumerate() {
        power += p;
        let next = devices.get(k + 1).map(|d| d.0).unwrap_or(0.0);
        if x > next {
            pieces.push((power, x - next));
        }
    }
    Ok(curve_from_levels(pieces))
}

/// Union of both curves' power levels, sorted.
fn merged_powers(a: &EpCurve, b: &EpCurve) -> Vec<f64> {
    let mut ps: Vec<f64> = a.powers().chain(b.powers()).collect();
    ps.sort_by(f64::total_cmp);
    ps.dedup();
    ps
}

/// Φ = sup_p max{E(p) − Ω(p), 0}, evaluated on the merged breakpoints.
pub fn max_energy_gap(reference: &EpCurve, capacity: &EpCurve) -> f64 {
    merged_powers(reference, capacity)
        .into_iter()
        .map(|p| reference.eval(p) - capacity.eval(p))
        .fold(0.0, f64::max)
}

/// The level p̃ at which a signal must be capped to shed exactly `gap` kWh,
/// i.e. the unique p̃ with E(p̃) = gap. A zero gap returns the peak.
pub fn shave_level(reference: &EpCurve, gap: f64) -> Result<f64> {
    let total = reference.total_energy();
    if gap > total + tol(total) || gap < 0.0 || gap.is_nan() {
        return Err(Error::GapExceedsEnergy { gap, energy: total });
    }
    if gap == 0.0 {
        return Ok(reference.peak_power());
    }
    if gap >= total {
        return Ok(0.0);
    }
    let pts = reference.points();
    // first point whose energy is at or below the gap
    let k = pts.partition_point(|&(_, e)| e > gap);
    let (p1, e1) = pts[k];
    if e1 == gap {
        return Ok(p1);
    }
    let (p0, e0) = pts[k - 1];
    Ok(p0 + (p1 - p0) * (e0 - gap) / (e0 - e1))
}

/// True iff the request's curve is dominated by the capacity curve.
pub fn check_feasibility(reference: &EpCurve, capacity: &EpCurve) -> bool {
    merged_powers(reference, capacity).into_iter().all(|p| {
        let cap = capacity.eval(p);
        reference.eval(p) <= cap + tol(cap)
    })
}

/// Ratings that decide the kind of infeasibility.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FleetTotals {
    /// Σ p̄_i (kW).
    pub max_power: f64,
    /// Σ p̄_i x_i = Ω(0) (kWh).
    pub energy: f64,
}

impl FleetTotals {
    pub fn of(fleet: &Fleet, state: &FleetState) -> Self {
        Self {
            max_power: fleet.total_power(),
            energy: state.total_energy(fleet),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Infeasibility {
    Feasible,
    Power,
    Energy,
    PowerAndEnergy,
    Heterogeneity,
}

impl Infeasibility {
    pub fn as_str(&self) -> &'static str {
        match self {
            Infeasibility::Feasible => "feasible",
            Infeasibility::Power => "power",
            Infeasibility::Energy => "energy",
            Infeasibility::PowerAndEnergy => "power_and_energy",
            Infeasibility::Heterogeneity => "heterogeneity",
        }
    }
}

/// Why (if at all) a request cannot be met: its peak exceeds the fleet's
/// power rating, its energy exceeds the stored energy, both, or neither in
/// isolation but the device mix still leaves a gap.
pub fn classify_infeasibility(
    reference: &EpCurve,
    capacity: &EpCurve,
    totals: FleetTotals,
) -> Infeasibility {
    let gap = max_energy_gap(reference, capacity);
    if gap <= tol(capacity.total_energy()) {
        return Infeasibility::Feasible;
    }
    let power = !le_tol(reference.peak_power(), totals.max_power);
    let energy = !le_tol(reference.total_energy(), totals.energy);
    match (power, energy) {
        (true, true) => Infeasibility::PowerAndEnergy,
        (true, false) => Infeasibility::Power,
        (false, true) => Infeasibility::Energy,
        (false, false) => Infeasibility::Heterogeneity,
    }
}

/// Scalar summary of a request against a fleet.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpReport {
    pub reference_energy_kwh: f64,
    pub reference_peak_kw: f64,
    pub fleet_energy_kwh: f64,
    pub fleet_power_kw: f64,
    pub gap_kwh: f64,
    pub shave_level_kw: f64,
    pub feasible: bool,
    pub classification: Infeasibility,
}

/// Curves and report for `reference` served by `fleet` from `state`.
pub fn analyse(
    fleet: &Fleet,
    state: &FleetState,
    reference: &StepSignal,
) -> Result<(EpCurve, EpCurve, EpReport)> {
    let request = ep_transform(reference)?;
    let capacity = capacity_curve(fleet, state)?;
    let totals = FleetTotals::of(fleet, state);
    let gap = max_energy_gap(&request, &capacity);
    let report = EpReport {
        reference_energy_kwh: request.total_energy(),
        reference_peak_kw: request.peak_power(),
        fleet_energy_kwh: totals.energy,
        fleet_power_kw: totals.max_power,
        gap_kwh: gap,
        shave_level_kw: shave_level(&request, gap)?,
        feasible: check_feasibility(&request, &capacity),
        classification: classify_infeasibility(&request, &capacity, totals),
    };
    Ok((request, capacity, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fleet::Device;

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

    /// Direct numeric integral of max{s − p, 0} over the steps.
    fn integral_above(s: &StepSignal, p: f64) -> f64 {
        s.steps()
            .map(|st| (st.value - p).max(0.0) * st.duration())
            .sum()
    }

    #[test]
    fn transform_worked_example() {
        let (_, s) = worked_example();
        let e = ep_transform(&s).unwrap();
        assert!(e.is_well_formed());
        assert_eq!(e.eval(0.0), 35.0);
        assert_eq!(e.eval(6.0), 18.0);
        assert_eq!(e.eval(12.0), 6.0);
        assert_eq!(e.eval(18.0), 0.0);
        assert_eq!(e.eval(30.0), 0.0);
        for p in [0.5, 1.0, 3.3, 4.0, 7.0, 13.0, 17.9] {
            assert!((e.eval(p) - integral_above(&s, p)).abs() < 1e-12, "p = {p}");
        }
        assert_eq!(
            e.powers().collect::<Vec<_>>(),
            vec![0.0, 1.0, 4.0, 12.0, 18.0]
        );
    }

    #[test]
    fn transform_zero_and_rectangle() {
        let z = ep_transform(&StepSignal::zero()).unwrap();
        assert_eq!(z.eval(0.0), 0.0);
        assert_eq!(z.eval(5.0), 0.0);
        assert!(z.is_well_formed());

        let r = ep_transform(&StepSignal::new(vec![0.0, 2.0], vec![5.0]).unwrap()).unwrap();
        for p in [0.0, 1.0, 2.5, 5.0, 6.0] {
            assert_eq!(r.eval(p), 2.0 * (5.0f64 - p).max(0.0));
        }
    }

    #[test]
    fn transform_rejects_negative() {
        let s = StepSignal::from_samples(&[1.0, -1.0], 1.0, 0.0).unwrap();
        assert!(matches!(
            ep_transform(&s),
            Err(Error::NegativeSignal { .. })
        ));
    }

    #[test]
    fn capacity_worked_example() {
        let (fleet, _) = worked_example();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        assert!(omega.is_well_formed());
        assert_eq!(omega.eval(0.0), 33.0);
        assert_eq!(omega.eval(16.0), 0.0);
        assert_eq!(omega.eval(20.0), 0.0);
        assert_eq!(omega.eval(6.0), 13.0);
        // staircase levels 16, 9, 6, 2 on unit intervals
        let stair = StepSignal::from_samples(&[16.0, 9.0, 6.0, 2.0], 1.0, 0.0).unwrap();
        assert_eq!(omega, ep_transform(&stair).unwrap());
    }

    #[test]
    fn capacity_with_ties_and_empty_devices() {
        let fleet = Fleet::validated(vec![
            Device::new("a", 1.0, 2.0, 2.0),
            Device::new("b", 2.0, 4.0, 4.0),
            Device::new("c", 5.0, 0.0, 1.0),
        ])
        .unwrap();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        assert_eq!(omega.points(), &[(0.0, 6.0), (3.0, 0.0)]);
        let empty = capacity_curve(&Fleet::default(), &FleetState::new(vec![])).unwrap();
        assert_eq!(empty, EpCurve::default());
    }

    #[test]
    fn gap_worked_example_is_five() {
        let (fleet, s) = worked_example();
        let e = ep_transform(&s).unwrap();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        assert_eq!(max_energy_gap(&e, &omega), 5.0);
        assert!(!check_feasibility(&e, &omega));
        assert_eq!(max_energy_gap(&omega, &omega), 0.0);
    }

    #[test]
    fn gap_single_device() {
        let fleet = Fleet::validated(vec![Device::new("a", 1.0, 1.0, 1.0)]).unwrap();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        let e = ep_transform(&StepSignal::new(vec![0.0, 1.0], vec![2.0]).unwrap()).unwrap();
        assert_eq!(e.eval(0.0) - omega.eval(0.0), 1.0);
        assert_eq!(e.eval(1.0) - omega.eval(1.0), 1.0);
        assert_eq!(max_energy_gap(&e, &omega), 1.0);
        assert_eq!(shave_level(&e, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn shave_levels() {
        let (_, s) = worked_example();
        let e = ep_transform(&s).unwrap();
        assert_eq!(shave_level(&e, 5.0).unwrap(), 13.0);
        assert_eq!(shave_level(&e, 0.0).unwrap(), 18.0);
        assert_eq!(shave_level(&e, 35.0).unwrap(), 0.0);
        assert_eq!(shave_level(&e, 6.0).unwrap(), 12.0);
        assert!(matches!(
            shave_level(&e, 36.0),
            Err(Error::GapExceedsEnergy { .. })
        ));
        let zero = ep_transform(&StepSignal::zero()).unwrap();
        assert_eq!(shave_level(&zero, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn feasibility() {
        let (fleet, _) = worked_example();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        let small = ep_transform(&StepSignal::new(vec![0.0, 1.0], vec![2.0]).unwrap()).unwrap();
        assert!(check_feasibility(&small, &omega));
        let empty = capacity_curve(&Fleet::default(), &FleetState::new(vec![])).unwrap();
        assert!(!check_feasibility(&small, &empty));
        assert!(check_feasibility(&EpCurve::default(), &empty));
    }

    #[test]
    fn classification() {
        let (fleet, s) = worked_example();
        let state = fleet.initial_state();
        let e = ep_transform(&s).unwrap();
        let omega = capacity_curve(&fleet, &state).unwrap();
        let totals = FleetTotals::of(&fleet, &state);
        assert_eq!(
            classify_infeasibility(&e, &omega, totals),
            Infeasibility::PowerAndEnergy
        );

        let small = ep_transform(&StepSignal::new(vec![0.0, 1.0], vec![2.0]).unwrap()).unwrap();
        assert_eq!(
            classify_infeasibility(&small, &omega, totals),
            Infeasibility::Feasible
        );

        let mixed = Fleet::validated(vec![
            Device::new("fast", 10.0, 1.0, 1.0),
            Device::new("slow", 1.0, 10.0, 10.0),
        ])
        .unwrap();
        let st = mixed.initial_state();
        let omega = capacity_curve(&mixed, &st).unwrap();
        let req = ep_transform(&StepSignal::new(vec![0.0, 5.0], vec![2.0]).unwrap()).unwrap();
        assert_eq!(omega.eval(1.0), 1.0);
        assert_eq!(req.eval(1.0), 5.0);
        assert_eq!(
            classify_infeasibility(&req, &omega, FleetTotals::of(&mixed, &st)),
            Infeasibility::Heterogeneity
        );

        // energy only: 1 kW for 40 h against 11 kWh
        let long = ep_transform(&StepSignal::new(vec![0.0, 40.0], vec![1.0]).unwrap()).unwrap();
        assert_eq!(
            classify_infeasibility(&long, &omega, FleetTotals::of(&mixed, &st)),
            Infeasibility::Energy
        );
        // power only: 12 kW for 0.05 h
        let spike = ep_transform(&StepSignal::new(vec![0.0, 0.05], vec![12.0]).unwrap()).unwrap();
        assert_eq!(
            classify_infeasibility(&spike, &omega, FleetTotals::of(&mixed, &st)),
            Infeasibility::Power
        );
    }

    #[test]
    fn capped_transform_identity_worked_example() {
        let (fleet, s) = worked_example();
        let e = ep_transform(&s).unwrap();
        let omega = capacity_curve(&fleet, &fleet.initial_state()).unwrap();
        let gap = max_energy_gap(&e, &omega);
        let level = shave_level(&e, gap).unwrap();
        let capped = ep_transform(&s.cap(level)).unwrap();
        for p in merged_powers(&e, &capped) {
            assert!((capped.eval(p) - (e.eval(p) - gap).max(0.0)).abs() < 1e-9);
        }
        assert!(check_feasibility(&capped, &omega));
        assert_eq!(s.cap(level).energy(), s.energy() - e.eval(level));
    }
}
