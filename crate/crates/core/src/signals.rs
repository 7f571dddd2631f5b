//! Right-open piecewise-constant power traces.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

/// A power trace that takes `values[k]` on `[breakpoints[k], breakpoints[k+1])`
/// and zero outside `[breakpoints[0], breakpoints[m])`.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct StepSignal {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

/// One constant piece of a [`StepSignal`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

impl Step {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

impl StepSignal {
    /// Builds a signal from `m + 1` strictly increasing breakpoints and `m`
    /// values. Two empty vectors give the zero signal.
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.is_empty() && values.is_empty() {
            return Ok(Self::default());
        }
        if breakpoints.len() != values.len() + 1 {
            return Err(Error::InvalidSignal(format!(
                "{} breakpoints for {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        if let Some(t) = breakpoints.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidSignal(format!("non-finite breakpoint {t}")));
        }
        if let Some(w) = breakpoints.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSignal(format!(
                "breakpoints not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal(format!("non-finite value {v}")));
        }
        Ok(Self {
            breakpoints,
            values,
        })
    }

    /// Uniform-grid signal: sample `k` covers `[t0 + kΔt, t0 + (k+1)Δt)`.
    /// Steps are kept one per sample; see [`StepSignal::merged`].
    pub fn from_samples(samples: &[f64], dt: f64, t0: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        if samples.is_empty() {
            return Ok(Self::default());
        }
        let breakpoints = (0..=samples.len()).map(|k| t0 + k as f64 * dt).collect();
        Self::new(breakpoints, samples.to_vec())
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of constant pieces.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn start(&self) -> Option<f64> {
        self.breakpoints.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.breakpoints.last().copied()
    }

    pub fn steps(&self) -> impl ExactSizeIterator<Item = Step> + '_ {
        self.values.iter().enumerate().map(|(k, &value)| Step {
            start: self.breakpoints[k],
            end: self.breakpoints[k + 1],
            value,
        })
    }

    pub fn value_at(&self, t: f64) -> f64 {
        match (self.start(), self.end()) {
            (Some(a), Some(b)) if t >= a && t < b => {
                // index of the last breakpoint <= t
                let k = self.breakpoints.partition_point(|&bp| bp <= t) - 1;
                self.values[k]
            }
            _ => 0.0,
        }
    }

    /// Largest value, or 0 for the empty signal.
    pub fn peak(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::min)
    }

    /// Integral of the signal (kWh).
    pub fn energy(&self) -> f64 {
        self.steps().map(|s| s.value * s.duration()).sum()
    }

    /// Pointwise `min(s(t), level)`. Breakpoints are kept unchanged.
    pub fn cap(&self, level: f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v.min(level)).collect(),
        }
    }

    /// Applies `f` to every value, keeping the breakpoints.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Same function with adjacent equal steps fused.
    pub fn merged(&self) -> Self {
        if self.is_empty() {
            return Self::default();
        }
        let mut breakpoints = vec![self.breakpoints[0]];
        let mut values: Vec<f64> = Vec::new();
        for step in self.steps() {
            if values.last() == Some(&step.value) {
                *breakpoints.last_mut().unwrap() = step.end;
            } else {
                values.push(step.value);
                breakpoints.push(step.end);
            }
        }
        Self {
            breakpoints,
            values,
        }
    }

    /// Splits every step so that no piece is longer than `dt`. Original
    /// breakpoints are kept; new ones are placed on the grid `start + k·dt`.
    pub fn refined(&self, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidStep(dt));
        }
        let Some(t0) = self.start() else {
            return Ok(Self::default());
        };
        let mut breakpoints = vec![t0];
        let mut values = Vec::new();
        for step in self.steps() {
            let mut k = ((step.start - t0) / dt).floor() as i64 + 1;
            loop {
                let t = t0 + k as f64 * dt;
                if t >= step.end - 1e-9 * dt {
                    break;
                }
                if t > *breakpoints.last().unwrap() + 1e-9 * dt {
                    breakpoints.push(t);
                    values.push(step.value);
                }
                k += 1;
            }
            breakpoints.push(step.end);
            values.push(step.value);
        }
        Self::new(breakpoints, values)
    }

    /// The piece of the signal on the step range `[from, to)`.
    pub fn slice_steps(&self, from: usize, to: usize) -> Self {
        if from >= to {
            return Self::default();
        }
        Self {
            breakpoints: self.breakpoints[from..=to].to_vec(),
            values: self.values[from..to].to_vec(),
        }
    }

    /// Parses the `t_start_h,power_kw` trace format.
    ///
    /// Rows must be strictly increasing in time. The final interval is closed
    /// either by a terminal row whose `power_kw` is empty, or by `duration`
    /// measured from the first row's start.
    pub fn from_csv_reader<R: Read>(reader: R, duration: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACE_CSV_HEADER {
            return Err(Error::InvalidSignal(format!(
                "expected header `t_start_h,power_kw`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut breakpoints = Vec::new();
        let mut values = Vec::new();
        let mut closed = false;
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            if closed {
                return Err(Error::InvalidSignal(format!(
                    "row {} follows the terminal row",
                    line + 2
                )));
            }
            let t: f64 = parse_field(record.get(0), "t_start_h", line)?;
            if let Some(&prev) = breakpoints.last() {
                if t <= prev {
                    return Err(Error::InvalidSignal(format!(
                        "row {}: time {t} h is not after {prev} h",
                        line + 2
                    )));
                }
            }
            breakpoints.push(t);
            match record.get(1).unwrap_or("") {
                "" => closed = true,
                raw => values.push(parse_field(Some(raw), "power_kw", line)?),
            }
        }
        if values.is_empty() {
            return Ok(Self::default());
        }
        if !closed {
            let Some(duration) = duration else {
                return Err(Error::InvalidSignal(
                    "last interval is open: add a terminal row with empty power_kw or give a duration"
                        .into(),
                ));
            };
            breakpoints.push(breakpoints[0] + duration);
        }
        Self::new(breakpoints, values)
    }

    pub fn from_csv_path(path: impl AsRef<Path>, duration: Option<f64>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, duration).map_err(|e| match e {
            Error::InvalidSignal(reason) => Error::TraceFormat {
                path: path.display().to_string(),
                reason,
            },
            Error::Csv(e) => Error::TraceFormat {
                path: path.display().to_string(),
                reason: e.to_string(),
            },
            other => other,
        })
    }

    /// Writes the trace format, closed with a terminal row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(TRACE_CSV_HEADER)?;
        for step in self.steps() {
            wtr.write_record([step.start.to_string(), step.value.to_string()])?;
        }
        if let Some(end) = self.end() {
            wtr.write_record([end.to_string(), String::new()])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub const TRACE_CSV_HEADER: [&str; 2] = ["t_start_h", "power_kw"];

fn parse_field(raw: Option<&str>, name: &str, line: usize) -> Result<f64> {
    let raw = raw.unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidSignal(format!("row {}: bad {name} `{raw}`", line + 2)))
}

/// Pointwise `min(s(t), level)`.
pub fn cap_signal(s: &StepSignal, level: f64) -> StepSignal {
    s.cap(level)
}

/// Integral of `s` (kWh).
pub fn signal_energy(s: &StepSignal) -> f64 {
    s.energy()
}
