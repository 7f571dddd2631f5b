//! Dispatch of heterogeneous, energy-constrained storage fleets so as to
//! minimise energy-not-served, together with the E-p analysis tools that
//! predict that minimum and a Monte Carlo engine that measures the fleet's
//! contribution to generation adequacy (LOLE / EENS).
//!
//! Units: power in kW, energy in kWh, time in hours, unless a type says
//! otherwise (the adequacy study works in MW / MWh).
//!
//! Sign convention: discharge power is positive, charge power is negative.

pub mod adequacy;
pub mod dispatch;
pub mod ep_analysis;
mod error;
pub mod fleet;
pub mod oracle;
pub mod signals;
pub mod simulate;

pub use error::{Error, Result};

/// Absolute tolerance for values of magnitude up to one, relative above.
pub const TOLERANCE: f64 = 1e-9;

/// Tolerance scaled to the magnitude of `v`.
#[inline]
pub fn tol(v: f64) -> f64 {
    TOLERANCE * v.abs().max(1.0)
}

/// `a <= b` up to [`tol`] at the larger magnitude.
#[inline]
pub(crate) fn le_tol(a: f64, b: f64) -> bool {
    a <= b + tol(a.abs().max(b.abs()))
}
