//! Storage devices, fleets, and the time-to-go state representation.
//!
//! A device's state is its time-to-go `x = e / p̄`: the number of hours it
//! could still run at full discharge power. The fleet state is the vector of
//! time-to-go values in canonical (file) order.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{tol, Error, Result};

/// A single energy-constrained storage unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Device {
    pub id: String,
    /// Maximum discharge power p̄ (kW, > 0).
    #[serde(rename = "max_discharge_kw")]
    pub max_discharge: f64,
    /// Initial extractable energy (kWh).
    #[serde(rename = "energy_kwh")]
    pub energy: f64,
    /// Extractable energy when full (kWh).
    #[serde(rename = "capacity_kwh")]
    pub capacity: f64,
    /// Maximum charge power (kW, <= 0).
    #[serde(rename = "max_charge_kw")]
    pub max_charge: f64,
    /// Combined charge/discharge efficiency in (0, 1].
    pub efficiency: f64,
}

impl Device {
    /// A device with symmetric charge rating and unit efficiency.
    pub fn new(id: impl Into<String>, max_discharge: f64, energy: f64, capacity: f64) -> Self {
        Self {
            id: id.into(),
            max_discharge,
            energy,
            capacity,
            max_charge: -max_discharge,
            efficiency: 1.0,
        }
    }

    pub fn with_charge(mut self, max_charge: f64, efficiency: f64) -> Self {
        self.max_charge = max_charge;
        self.efficiency = efficiency;
        self
    }

    /// Initial time-to-go (h).
    pub fn time_to_go(&self) -> f64 {
        self.energy / self.max_discharge
    }

    /// Time-to-go when full (h).
    pub fn max_time_to_go(&self) -> f64 {
        self.capacity / self.max_discharge
    }

    fn violations(&self, out: &mut Vec<Violation>) {
        let mut push = |field: &'static str, message: String| {
            out.push(Violation {
                device_id: self.id.clone(),
                field,
                message,
            })
        };
        if !(self.max_discharge.is_finite() && self.max_discharge > 0.0) {
            push(
                "max_discharge_kw",
                format!("must be positive and finite, got {}", self.max_discharge),
            );
        }
        if !(self.energy.is_finite() && self.energy >= 0.0) {
            push(
                "energy_kwh",
                format!("must be non-negative and finite, got {}", self.energy),
            );
        }
        if !self.capacity.is_finite() || self.capacity < self.energy || self.capacity < 0.0 {
            push(
                "capacity_kwh",
                format!(
                    "must be finite and at least energy_kwh ({}), got {}",
                    self.energy, self.capacity
                ),
            );
        }
        if !(self.max_charge.is_finite() && self.max_charge <= 0.0) {
            push(
                "max_charge_kw",
                format!("must be finite and <= 0, got {}", self.max_charge),
            );
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            push(
                "efficiency",
                format!("must lie in (0, 1], got {}", self.efficiency),
            );
        }
    }
}

/// One violated device invariant.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub device_id: String,
    pub field: &'static str,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "device `{}`: {} {}",
            self.device_id, self.field, self.message
        )
    }
}

/// An ordered collection of devices. The order is the canonical index order
/// used by every state and input vector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub devices: Vec<Device>,
}

pub const FLEET_CSV_HEADER: [&str; 6] = [
    "id",
    "max_discharge_kw",
    "energy_kwh",
    "capacity_kwh",
    "max_charge_kw",
    "efficiency",
];

impl Fleet {
    /// Wraps `devices` without checking them; see [`Fleet::validate`].
    pub fn new(devices: Vec<Device>) -> Self {
        Self { devices }
    }

    /// Wraps `devices`, failing with every violated invariant.
    pub fn validated(devices: Vec<Device>) -> Result<Self> {
        let fleet = Self::new(devices);
        let violations = fleet.validate();
        if violations.is_empty() {
            Ok(fleet)
        } else {
            Err(Error::InvalidFleet(violations))
        }
    }

    pub fn len(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    /// Lists every violated device invariant; empty iff the fleet is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for d in &self.devices {
            if !seen.insert(d.id.as_str()) {
                out.push(Violation {
                    device_id: d.id.clone(),
                    field: "id",
                    message: "is not unique".into(),
                });
            }
            d.violations(&mut out);
        }
        out
    }

    pub fn max_powers(&self) -> impl Iterator<Item = f64> + '_ {
        self.devices.iter().map(|d| d.max_discharge)
    }

    /// Σ p̄_i (kW).
    pub fn total_power(&self) -> f64 {
        self.max_powers().sum()
    }

    /// Σ p̲_i (kW, <= 0).
    pub fn total_charge_power(&self) -> f64 {
        self.devices.iter().map(|d| d.max_charge).sum()
    }

    /// State built from each device's initial energy.
    pub fn initial_state(&self) -> FleetState {
        FleetState::new(self.devices.iter().map(Device::time_to_go).collect())
    }

    /// State with every device full.
    pub fn full_state(&self) -> FleetState {
        FleetState::new(self.devices.iter().map(Device::max_time_to_go).collect())
    }

    /// Reads a fleet CSV. Missing or unknown columns are rejected.
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        for required in FLEET_CSV_HEADER {
            if !headers.iter().any(|h| h == required) {
                return Err(fleet_csv_error(format!("missing column `{required}`")));
            }
        }
        if let Some(extra) = headers.iter().find(|h| !FLEET_CSV_HEADER.contains(h)) {
            return Err(fleet_csv_error(format!("unknown column `{extra}`")));
        }
        let devices = rdr
            .deserialize::<Device>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::validated(devices)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file).map_err(|e| match e {
            Error::Csv(e) => Error::TraceFormat {
                path: path.display().to_string(),
                reason: e.to_string(),
            },
            Error::TraceFormat { reason, .. } => Error::TraceFormat {
                path: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for d in &self.devices {
            wtr.serialize(d)?;
        }
        if self.devices.is_empty() {
            wtr.write_record(FLEET_CSV_HEADER)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn fleet_csv_error(reason: String) -> Error {
    Error::TraceFormat {
        path: "<fleet>".into(),
        reason,
    }
}

/// Per-device time-to-go (h), in fleet order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetState {
    pub x: Vec<f64>,
}

impl FleetState {
    pub fn new(x: Vec<f64>) -> Self {
        Self { x }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn check_against(&self, fleet: &Fleet) -> Result<()> {
        if self.x.len() != fleet.len() {
            return Err(Error::StateLength {
                expected: fleet.len(),
                got: self.x.len(),
            });
        }
        if let Some((i, v)) = self
            .x
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < -tol(**v))
        {
            return Err(Error::PreconditionViolation(format!(
                "time-to-go of device `{}` is {v}",
                fleet.devices[i].id
            )));
        }
        Ok(())
    }

    /// Stored energy per device (kWh).
    pub fn energies(&self, fleet: &Fleet) -> Vec<f64> {
        self.x
            .iter()
            .zip(fleet.max_powers())
            .map(|(x, p)| x * p)
            .collect()
    }

    /// Σ p̄_i x_i (kWh).
    pub fn total_energy(&self, fleet: &Fleet) -> f64 {
        self.energies(fleet).iter().sum()
    }

    /// True when every device sits at its maximum time-to-go (within tolerance).
    pub fn is_full(&self, fleet: &Fleet) -> bool {
        self.x
            .iter()
            .zip(&fleet.devices)
            .all(|(x, d)| (d.max_time_to_go() - x).abs() <= tol(*x))
    }
}

/// Applies the constant per-device input `u` (kW, signed) for `dt` hours.
///
/// Discharge moves x down by `u·dt/p̄`; charge moves it up by `η·|u|·dt/p̄`.
/// Values that land within round-off of a bound are snapped onto it.
// Residue left by `x - (x - target)` style updates.
const ROUND_OFF: f64 = 1e-12;

pub fn apply_input(state: &FleetState, fleet: &Fleet, u: &[f64], dt: f64) -> Result<FleetState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidStep(dt));
    }
    state.check_against(fleet)?;
    if u.len() != fleet.len() {
        return Err(Error::StateLength {
            expected: fleet.len(),
            got: u.len(),
        });
    }
    let mut next = Vec::with_capacity(fleet.len());
    for ((d, &x), &ui) in fleet.devices.iter().zip(&state.x).zip(u) {
        let p = d.max_discharge;
        let xmax = d.max_time_to_go();
        if !ui.is_finite() {
            return Err(Error::PreconditionViolation(format!(
                "device `{}` given non-finite input",
                d.id
            )));
        }
        let dx = if ui >= 0.0 {
            let limit = p * (x / dt).min(1.0);
            if ui > limit + tol(limit) {
                return Err(Error::PreconditionViolation(format!(
                    "device `{}` discharge {ui} kW exceeds interval limit {limit} kW",
                    d.id
                )));
            }
            -ui * dt / p
        } else {
            if ui < d.max_charge - tol(d.max_charge) {
                return Err(Error::PreconditionViolation(format!(
                    "device `{}` charge {ui} kW exceeds rating {} kW",
                    d.id, d.max_charge
                )));
            }
            -d.efficiency * ui * dt / p
        };
        let mut xn = x + dx;
        if xn > xmax {
            if xn - xmax > tol(xmax) {
                return Err(Error::PreconditionViolation(format!(
                    "device `{}` charged to {xn} h beyond its maximum {xmax} h",
                    d.id
                )));
            }
            xn = xmax;
        } else if ui < 0.0 && xmax - xn <= ROUND_OFF * xmax.max(1.0) {
            xn = xmax;
        }
        if xn < 0.0 {
            if xn < -tol(x) {
                return Err(Error::PreconditionViolation(format!(
                    "device `{}` discharged to {xn} h",
                    d.id
                )));
            }
            xn = 0.0;
        } else if ui > 0.0 && xn <= ROUND_OFF * x.max(1.0) {
            xn = 0.0;
        }
        next.push(xn);
    }
    Ok(FleetState::new(next))
}
