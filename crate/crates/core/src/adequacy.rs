//! Monte Carlo generation adequacy.
//!
//! Each sampled year draws a demand trace, a wind trace and an hourly
//! conventional availability trace, forms the margin `supply − demand` and
//! then runs the storage fleet through that margin under every configured
//! policy. All policies and the no-storage baseline see the same margin, so
//! per-year differences come from the policy alone.
//!
//! Power in this module is in MW and energy in MWh; the storage fleet file
//! keeps its kW / kWh columns and is converted at the boundary.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::{Policy, RechargeBasis};
use crate::fleet::Fleet;
use crate::signals::StepSignal;
use crate::simulate::{RunOptions, StreamingDispatcher};
use crate::{Error, Result};

/// Steps whose post-storage ENS exceeds this (MWh) count as loss of load.
pub const LOLE_ENS_THRESHOLD_MWH: f64 = 1e-6;

const KW_PER_MW: f64 = 1000.0;

/// A group of identical conventional units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorClass {
    pub unit_capacity_mw: f64,
    pub unit_count: usize,
    /// Long-run fraction of time a unit is available.
    pub availability: f64,
    /// Mean time between subsequent failure events (h).
    pub mtbf_h: f64,
}

impl GeneratorClass {
    /// Mean time to failure (h).
    pub fn mttf_h(&self) -> f64 {
        self.availability * self.mtbf_h
    }

    /// Mean time to repair (h).
    pub fn mttr_h(&self) -> f64 {
        (1.0 - self.availability) * self.mtbf_h
    }

    /// Checks the class; `index` is only used in the error.
    pub fn validate(&self, index: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::DegenerateRates { index, reason });
        if !(self.unit_capacity_mw.is_finite() && self.unit_capacity_mw >= 0.0) {
            return fail(format!(
                "unit capacity must be non-negative, got {} MW",
                self.unit_capacity_mw
            ));
        }
        if !(self.availability > 0.0 && self.availability < 1.0) {
            return fail(format!(
                "availability must lie strictly between 0 and 1, got {}",
                self.availability
            ));
        }
        if !(self.mtbf_h.is_finite() && self.mtbf_h > 0.0) {
            return fail(format!("mtbf must be positive, got {} h", self.mtbf_h));
        }
        if self.mttf_h() < 1.0 {
            return fail(format!("MTTF {} h is below one hour", self.mttf_h()));
        }
        if self.mttr_h() < 1.0 {
            return fail(format!("MTTR {} h is below one hour", self.mttr_h()));
        }
        Ok(())
    }
}

/// Up periods `[start, end)` of one unit over `hours` hours.
///
/// The unit is an hourly two-state chain failing with probability 1/MTTF
/// and repaired with probability 1/MTTR; it starts up with probability
/// equal to the availability. Sojourns are drawn whole, so the cost is per
/// transition rather than per hour.
pub fn unit_up_periods<R: Rng>(
    class: &GeneratorClass,
    hours: usize,
    rng: &mut R,
) -> Result<Vec<Range<usize>>> {
    class.validate(0)?;
    let to_fail = sojourn(class.mttf_h())?;
    let to_repair = sojourn(class.mttr_h())?;
    let mut up = rng.random_bool(class.availability);
    let mut t = 0usize;
    let mut periods = Vec::new();
    while t < hours {
        let len = 1usize.saturating_add(if up {
            to_fail.sample(rng)
        } else {
            to_repair.sample(rng)
        } as usize);
        let end = t.saturating_add(len).min(hours);
        if up {
            periods.push(t..end);
        }
        t = end;
        up = !up;
    }
    Ok(periods)
}

// number of extra hours in a state left with probability 1/mean each hour
fn sojourn(mean_h: f64) -> Result<Geometric> {
    Geometric::new(1.0 / mean_h).map_err(|e| Error::DegenerateRates {
        index: 0,
        reason: e.to_string(),
    })
}

/// Hourly available conventional capacity (MW) summed over all units.
pub fn simulate_conventional_availability<R: Rng>(
    classes: &[GeneratorClass],
    hours: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    for (i, c) in classes.iter().enumerate() {
        c.validate(i)?;
    }
    let mut total = vec![0.0; hours];
    let mut diff = vec![0i64; hours + 1];
    for class in classes {
        diff.iter_mut().for_each(|d| *d = 0);
        for _ in 0..class.unit_count {
            for period in unit_up_periods(class, hours, rng)? {
                diff[period.start] += 1;
                diff[period.end] -= 1;
            }
        }
        let mut up = 0i64;
        for (h, slot) in total.iter_mut().enumerate() {
            up += diff[h];
            *slot += up as f64 * class.unit_capacity_mw;
        }
    }
    Ok(total)
}

/// `conventional + wind − demand` per step, as a step signal from t = 0.
pub fn build_margin_trace(
    conventional: &[f64],
    wind: &[f64],
    demand: &[f64],
    dt: f64,
) -> Result<StepSignal> {
    if conventional.len() != wind.len() || wind.len() != demand.len() {
        return Err(Error::LengthMismatch(format!(
            "conventional {}, wind {}, demand {}",
            conventional.len(),
            wind.len(),
            demand.len()
        )));
    }
    let margin: Vec<f64> = conventional
        .iter()
        .zip(wind)
        .zip(demand)
        .map(|((c, w), d)| c + w - d)
        .collect();
    StepSignal::from_samples(&margin, dt, 0.0)
}

/// A mean with the half-width of its 95% confidence interval.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

/// Normal-approximation 95% interval: mean ± 1.96·s/√N, with the N − 1
/// sample standard deviation.
pub fn confidence_interval(samples: &[f64]) -> Result<Estimate> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mean = compensated_sum(samples.iter().copied()) / n as f64;
    let ss = compensated_sum(samples.iter().map(|v| (v - mean) * (v - mean)));
    let std = (ss / (n - 1) as f64).sqrt();
    Ok(Estimate {
        mean,
        half_width: 1.96 * std / (n as f64).sqrt(),
    })
}

/// Neumaier summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

// ---------------------------------------------------------------- config

/// AR(1) demand around a seasonal shape (MW).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDemand {
    pub base_mw: f64,
    /// Peak-to-mean swing of the yearly cycle, highest at the start of the year.
    pub annual_amplitude_mw: f64,
    /// Peak-to-mean swing of the daily cycle, highest at midday.
    pub daily_amplitude_mw: f64,
    /// Stationary standard deviation of the noise.
    pub noise_std_mw: f64,
    /// Step-to-step autocorrelation of the noise.
    pub persistence: f64,
}

/// AR(1) capacity factor clamped to [0, 1].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticWind {
    pub mean_capacity_factor: f64,
    pub persistence: f64,
    /// Stationary standard deviation before clamping.
    pub std: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticDemand>,
    /// Directory of yearly demand traces (MW in the value column).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindConfig {
    pub installed_mw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticWind>,
    /// Directory of yearly capacity-factor traces.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_dir: Option<PathBuf>,
}

fn default_hours_per_year() -> f64 {
    8760.0
}

fn default_dt() -> f64 {
    1.0
}

fn default_policies() -> Vec<String> {
    ["optimal", "lpf", "pop", "pd"].map(String::from).to_vec()
}

/// The study configuration as read from JSON. Paths are relative to the
/// config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub years: usize,
    #[serde(default = "default_hours_per_year")]
    pub hours_per_year: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_dt")]
    pub dt_h: f64,
    #[serde(default)]
    pub generators: Vec<GeneratorClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<WindConfig>,
    pub demand: DemandConfig,
    /// Storage fleet CSV; without one only the baseline is computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage_fleet: Option<PathBuf>,
    #[serde(default = "default_policies")]
    pub policies: Vec<String>,
    #[serde(default)]
    pub recharge_basis: RechargeBasis,
    /// Worker threads; 0 means one per core.
    #[serde(default)]
    pub workers: usize,
}

impl StudyConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads and resolves a config file.
    pub fn load(path: impl AsRef<Path>) -> Result<Study> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text)?.resolve(base)
    }

    /// Validates the config and loads every referenced file.
    pub fn resolve(&self, base_dir: &Path) -> Result<Study> {
        let invalid = |m: String| Err(Error::ConfigInvalid(m));
        if self.years < 1 {
            return invalid("years must be at least 1".into());
        }
        if !(self.dt_h.is_finite() && self.dt_h > 0.0) {
            return invalid(format!("dt_h must be positive, got {}", self.dt_h));
        }
        let ratio = self.hours_per_year / self.dt_h;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9 * ratio) {
            return invalid(format!(
                "dt_h {} does not divide hours_per_year {}",
                self.dt_h, self.hours_per_year
            ));
        }
        let steps = ratio.round() as usize;
        for (i, c) in self.generators.iter().enumerate() {
            c.validate(i)?;
        }
        let policies = self
            .policies
            .iter()
            .map(|name| Policy::from_str(name))
            .collect::<Result<Vec<_>>>()?;
        if policies.iter().any(|p| !p.is_causal()) {
            return Err(Error::StreamingNonCausal);
        }
        let demand = match (&self.demand.synthetic, &self.demand.trace_dir) {
            (Some(s), None) => {
                check_persistence(s.persistence, "demand")?;
                TraceSource::SyntheticDemand(s.clone())
            }
            (None, Some(dir)) => {
                TraceSource::Pool(load_pool(&base_dir.join(dir), steps, self.dt_h)?)
            }
            _ => return invalid("demand needs exactly one of `synthetic` or `trace_dir`".into()),
        };
        let (wind, installed_wind_mw) = match &self.wind {
            None => (TraceSource::Zero, 0.0),
            Some(w) => {
                let source = match (&w.synthetic, &w.trace_dir) {
                    (Some(s), None) => {
                        check_persistence(s.persistence, "wind")?;
                        TraceSource::SyntheticWind(s.clone())
                    }
                    (None, Some(dir)) => {
                        TraceSource::Pool(load_pool(&base_dir.join(dir), steps, self.dt_h)?)
                    }
                    _ => {
                        return invalid(
                            "wind needs exactly one of `synthetic` or `trace_dir`".into(),
                        )
                    }
                };
                (source, w.installed_mw)
            }
        };
        let fleet = match &self.storage_fleet {
            None => Fleet::default(),
            Some(p) => {
                let path = base_dir.join(p);
                if !path.is_file() {
                    return invalid(format!("storage fleet {} does not exist", path.display()));
                }
                let fleet = Fleet::from_csv_path(&path)?;
                Fleet::validated(fleet.devices)?
            }
        };
        Ok(Study {
            years: self.years,
            steps_per_year: steps,
            dt_h: self.dt_h,
            seed: self.seed,
            generators: self.generators.clone(),
            demand,
            wind,
            installed_wind_mw,
            fleet,
            policies,
            recharge_basis: self.recharge_basis,
            workers: self.workers,
        })
    }
}

fn check_persistence(phi: f64, what: &str) -> Result<()> {
    if (0.0..1.0).contains(&phi) {
        Ok(())
    } else {
        Err(Error::ConfigInvalid(format!(
            "{what} persistence must lie in [0, 1), got {phi}"
        )))
    }
}

/// Reads every `*.csv` in `dir` and resamples it onto the study grid.
fn load_pool(dir: &Path, steps: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| {
        Error::ConfigInvalid(format!(
            "cannot read trace directory {}: {e}",
            dir.display()
        ))
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::ConfigInvalid(format!(
            "trace directory {} holds no .csv files",
            dir.display()
        )));
    }
    let horizon = steps as f64 * dt;
    files
        .iter()
        .map(|path| {
            let bad = |reason: String| Error::TraceFormat {
                path: path.display().to_string(),
                reason,
            };
            let signal = StepSignal::from_csv_path(path, Some(horizon))?;
            let (Some(start), Some(end)) = (signal.start(), signal.end()) else {
                return Err(bad("trace is empty".into()));
            };
            if end - start < horizon - 1e-9 * horizon {
                return Err(bad(format!(
                    "covers {} h but a study year is {horizon} h",
                    end - start
                )));
            }
            for &b in signal.breakpoints() {
                let k = (b - start) / dt;
                if b < start + horizon && (k - k.round()).abs() > 1e-9 * k.max(1.0) {
                    return Err(Error::ConfigInvalid(format!(
                        "{}: breakpoint {b} h is off the {dt} h study grid",
                        path.display()
                    )));
                }
            }
            Ok((0..steps)
                .map(|k| signal.value_at(start + k as f64 * dt))
                .collect())
        })
        .collect()
}

/// Where a yearly demand or wind trace comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TraceSource {
    Zero,
    SyntheticDemand(SyntheticDemand),
    SyntheticWind(SyntheticWind),
    /// Pre-resampled yearly traces; each year picks one uniformly.
    Pool(Vec<Vec<f64>>),
}

impl TraceSource {
    /// One year of values, `steps` long. Demand is in MW, wind in capacity
    /// factor.
    pub fn sample<R: Rng>(&self, rng: &mut R, steps: usize, dt: f64) -> Vec<f64> {
        match self {
            TraceSource::Zero => vec![0.0; steps],
            TraceSource::Pool(pool) => pool[rng.random_range(0..pool.len())].clone(),
            TraceSource::SyntheticDemand(d) => {
                let year = steps as f64 * dt;
                let noise = ar1(rng, steps, d.persistence, d.noise_std_mw);
                (0..steps)
                    .map(|k| {
                        let t = k as f64 * dt;
                        let annual = (std::f64::consts::TAU * t / year).cos();
                        let daily = -(std::f64::consts::TAU * t / 24.0).cos();
                        d.base_mw
                            + d.annual_amplitude_mw * annual
                            + d.daily_amplitude_mw * daily
                            + noise[k]
                    })
                    .collect()
            }
            TraceSource::SyntheticWind(w) => ar1(rng, steps, w.persistence, w.std)
                .into_iter()
                .map(|n| (w.mean_capacity_factor + n).clamp(0.0, 1.0))
                .collect(),
        }
    }
}

// zero-mean stationary AR(1) with the given marginal standard deviation
fn ar1<R: Rng>(rng: &mut R, steps: usize, phi: f64, std: f64) -> Vec<f64> {
    if std == 0.0 {
        return vec![0.0; steps];
    }
    let innovation = std * (1.0 - phi * phi).sqrt();
    let mut out = Vec::with_capacity(steps);
    let mut n = std * rng.sample::<f64, _>(StandardNormal);
    for _ in 0..steps {
        out.push(n);
        n = phi * n + innovation * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// A validated study ready to run.
#[derive(Clone, Debug, PartialEq)]
pub struct Study {
    pub years: usize,
    pub steps_per_year: usize,
    pub dt_h: f64,
    pub seed: u64,
    pub generators: Vec<GeneratorClass>,
    pub demand: TraceSource,
    pub wind: TraceSource,
    pub installed_wind_mw: f64,
    /// Storage fleet in kW / kWh.
    pub fleet: Fleet,
    pub policies: Vec<Policy>,
    pub recharge_basis: RechargeBasis,
    /// 0 means one per core.
    pub workers: usize,
}

impl Study {
    /// The margin trace (MW) of sampled year `year`.
    pub fn margin_of_year(&self, year: usize) -> Result<StepSignal> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(year as u64);
        let steps = self.steps_per_year;
        let dt = self.dt_h;
        let demand = self.demand.sample(&mut rng, steps, dt);
        let wind: Vec<f64> = self
            .wind
            .sample(&mut rng, steps, dt)
            .into_iter()
            .map(|cf| cf * self.installed_wind_mw)
            .collect();
        let hours = ((steps as f64 * dt).ceil() as usize).max(1);
        let hourly = simulate_conventional_availability(&self.generators, hours, &mut rng)?;
        let conventional: Vec<f64> = (0..steps)
            .map(|k| hourly[((k as f64 * dt).floor() as usize).min(hours - 1)])
            .collect();
        build_margin_trace(&conventional, &wind, &demand, dt)
    }
}

/// One year under one policy (or without storage).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct AnnualOutcome {
    pub ens_mwh: f64,
    pub lole_h: f64,
    /// Shortfall events (maximal runs of negative margin).
    pub events: usize,
    /// Events that began with every device full.
    pub events_fully_charged: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct YearOutcome {
    baseline: AnnualOutcome,
    policies: Vec<AnnualOutcome>,
}

/// Storage request (kW) for a margin (MW): shortfalls are discharged,
/// surplus is offered for charging up to the fleet's charge rating.
pub fn storage_request_kw(margin_mw: f64, charge_limit_kw: f64) -> f64 {
    if margin_mw < 0.0 {
        -margin_mw * KW_PER_MW
    } else if margin_mw > 0.0 && charge_limit_kw > 0.0 {
        -(margin_mw * KW_PER_MW).min(charge_limit_kw)
    } else {
        0.0
    }
}

fn baseline_outcome(margin: &[f64], dt: f64) -> AnnualOutcome {
    let mut out = AnnualOutcome::default();
    let mut in_event = false;
    for &m in margin {
        let ens = (-m).max(0.0) * dt;
        out.ens_mwh += ens;
        if ens > LOLE_ENS_THRESHOLD_MWH {
            out.lole_h += dt;
        }
        if m < 0.0 && !in_event {
            out.events += 1;
        }
        in_event = m < 0.0;
    }
    out
}

fn policy_outcome(study: &Study, requests: &[f64], policy: Policy) -> Result<AnnualOutcome> {
    let fleet = &study.fleet;
    let options = RunOptions {
        recharge: true,
        recharge_basis: study.recharge_basis,
    };
    let mut dispatcher = StreamingDispatcher::new(fleet, fleet.initial_state(), policy, options)?;
    let mut out = AnnualOutcome::default();
    let mut in_event = false;
    for &r in requests {
        if r > 0.0 && !in_event {
            out.events += 1;
            if dispatcher.state().is_full(fleet) {
                out.events_fully_charged += 1;
            }
        }
        in_event = r > 0.0;
        let ens = dispatcher.step(r, study.dt_h)?.ens / KW_PER_MW;
        out.ens_mwh += ens;
        if ens > LOLE_ENS_THRESHOLD_MWH {
            out.lole_h += study.dt_h;
        }
    }
    Ok(out)
}

fn simulate_year(study: &Study, year: usize) -> Result<YearOutcome> {
    let margin = study.margin_of_year(year)?;
    let charge_limit = -study.fleet.total_charge_power();
    let requests: Vec<f64> = margin
        .values()
        .iter()
        .map(|&m| storage_request_kw(m, charge_limit))
        .collect();
    let policies = study
        .policies
        .iter()
        .map(|&p| policy_outcome(study, &requests, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(YearOutcome {
        baseline: baseline_outcome(margin.values(), study.dt_h),
        policies,
    })
}

/// Aggregated results of one policy (or the baseline).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolicyResult {
    /// Policy name, or `no_storage`.
    pub policy: String,
    pub label: String,
    pub lole_h_per_year: Estimate,
    pub eens_mwh_per_year: Estimate,
    pub events: usize,
    pub events_fully_charged: usize,
    /// Fraction of shortfall events that began fully charged; absent for
    /// the baseline or when no event occurred.
    pub charged_at_event_start: Option<f64>,
    pub annual_ens_mwh: Vec<f64>,
    pub annual_lole_h: Vec<f64>,
}

impl PolicyResult {
    fn from_years(
        policy: String,
        label: String,
        years: &[AnnualOutcome],
        with_storage: bool,
    ) -> Result<Self> {
        let annual_ens_mwh: Vec<f64> = years.iter().map(|y| y.ens_mwh).collect();
        let annual_lole_h: Vec<f64> = years.iter().map(|y| y.lole_h).collect();
        let events = years.iter().map(|y| y.events).sum();
        let events_fully_charged = years.iter().map(|y| y.events_fully_charged).sum();
        Ok(Self {
            policy,
            label,
            lole_h_per_year: estimate(&annual_lole_h)?,
            eens_mwh_per_year: estimate(&annual_ens_mwh)?,
            events,
            events_fully_charged,
            charged_at_event_start: (with_storage && events > 0)
                .then(|| events_fully_charged as f64 / events as f64),
            annual_ens_mwh,
            annual_lole_h,
        })
    }
}

// a single year has no spread to estimate; report a zero-width interval
fn estimate(samples: &[f64]) -> Result<Estimate> {
    match samples {
        [only] => Ok(Estimate {
            mean: *only,
            half_width: 0.0,
        }),
        _ => confidence_interval(samples),
    }
}

/// Result of an adequacy study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyResult {
    pub years: usize,
    pub seed: u64,
    pub dt_h: f64,
    pub steps_per_year: usize,
    pub baseline: PolicyResult,
    pub policies: Vec<PolicyResult>,
    /// Years breaking `ENS(optimal) ≤ ENS(other) ≤ ENS(no storage)` by more
    /// than the LOLE threshold, summed over policy pairs.
    pub dominance_violations: usize,
}

impl StudyResult {
    /// Plain-text table: Policy, LOLE, EENS, charged-at-start.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<24} {:>22} {:>26} {:>18}",
            "Policy", "LOLE (h/y)", "EENS (MWh/y)", "charged at start"
        );
        for r in std::iter::once(&self.baseline).chain(&self.policies) {
            let charged = r
                .charged_at_event_start
                .map_or_else(|| "-".to_string(), |f| format!("{f:.3}"));
            let _ = writeln!(
                out,
                "{:<24} {:>22} {:>26} {:>18}",
                r.label,
                format!(
                    "{:.3} ± {:.3}",
                    r.lole_h_per_year.mean, r.lole_h_per_year.half_width
                ),
                format!(
                    "{:.2} ± {:.2}",
                    r.eens_mwh_per_year.mean, r.eens_mwh_per_year.half_width
                ),
                charged
            );
        }
        out
    }
}

/// Runs every sampled year (in parallel when `study.workers != 1`) and
/// aggregates. Year `y` always uses substream `y` of the study seed, so the
/// result does not depend on the worker count.
pub fn run_adequacy_study(study: &Study) -> Result<StudyResult> {
    if study.years < 1 {
        return Err(Error::ConfigInvalid("years must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(study.workers)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("cannot start worker pool: {e}")))?;
    log::info!(
        "adequacy study: {} years x {} steps, {} policies, {} workers",
        study.years,
        study.steps_per_year,
        study.policies.len(),
        pool.current_num_threads()
    );
    let outcomes: Vec<YearOutcome> = pool.install(|| {
        (0..study.years)
            .into_par_iter()
            .map(|y| simulate_year(study, y))
            .collect::<Result<Vec<_>>>()
    })?;

    let baseline_years: Vec<AnnualOutcome> = outcomes.iter().map(|o| o.baseline).collect();
    let baseline = PolicyResult::from_years(
        "no_storage".into(),
        "No storage".into(),
        &baseline_years,
        false,
    )?;
    let mut policies = Vec::with_capacity(study.policies.len());
    for (j, p) in study.policies.iter().enumerate() {
        let years: Vec<AnnualOutcome> = outcomes.iter().map(|o| o.policies[j]).collect();
        policies.push(PolicyResult::from_years(
            p.name().into(),
            p.label().into(),
            &years,
            true,
        )?);
    }

    let optimal = study.policies.iter().position(|&p| p == Policy::Optimal);
    let mut dominance_violations = 0;
    for o in &outcomes {
        for (j, r) in o.policies.iter().enumerate() {
            if r.ens_mwh > o.baseline.ens_mwh + LOLE_ENS_THRESHOLD_MWH {
                dominance_violations += 1;
            }
            if let Some(opt) = optimal {
                if o.policies[opt].ens_mwh > r.ens_mwh + LOLE_ENS_THRESHOLD_MWH {
                    log::warn!("optimal exceeds {} in a sampled year", study.policies[j]);
                    dominance_violations += 1;
                }
            }
        }
    }
    Ok(StudyResult {
        years: study.years,
        seed: study.seed,
        dt_h: study.dt_h,
        steps_per_year: study.steps_per_year,
        baseline,
        policies,
        dominance_violations,
    })
}
