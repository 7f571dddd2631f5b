use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ucap::adequacy::{run_adequacy_study, StudyConfig};
use ucap::dispatch::{Policy, RechargeBasis};
use ucap::ep_analysis::{analyse, capacity_curve, ep_transform, max_energy_gap};
use ucap::fleet::{Device, Fleet};
use ucap::oracle::{agreement_suite, min_ens_oracle};
use ucap::signals::StepSignal;
use ucap::simulate::{run_dispatch, RunOptions, RunSummary, RunTrace};

#[derive(Parser, Debug)]
#[command(
    name = "ucap",
    version,
    about = "Storage fleet dispatch, E-p analysis and adequacy studies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a dispatch policy over a reference trace.
    Dispatch(DispatchArgs),
    /// E-p curves, max energy gap and feasibility of a reference.
    Ep(EpArgs),
    /// Monte Carlo LOLE / EENS study from a JSON config.
    Adequacy(AdequacyArgs),
    /// The four-device worked example, step by step.
    Demo(DemoArgs),
    /// Compare the optimal policy, the E-p gap and the max-flow oracle on
    /// random instances.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Fleet CSV.
    #[arg(long)]
    fleet: PathBuf,
    /// Reference trace CSV (`t_start_h,power_kw`).
    #[arg(long)]
    reference: PathBuf,
    /// Length of the last reference interval (h) when the trace has no
    /// terminal row.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args, Debug)]
struct DispatchArgs {
    #[command(flatten)]
    input: InputArgs,
    /// optimal, lpf, pop, pd or peak_shaving.
    #[arg(long, default_value = "optimal", value_parser = parse_policy)]
    policy: Policy,
    /// Resample the reference onto steps no longer than this (h).
    #[arg(long)]
    dt: Option<f64>,
    /// Charge from negative requests instead of idling.
    #[arg(long)]
    recharge: bool,
    /// How a charge request is matched: `stored` energy or `grid` draw.
    #[arg(long, default_value = "stored", value_parser = parse_basis)]
    recharge_basis: RechargeBasis,
    /// Write trace.csv and summary.json here instead of printing the trace.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EpArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Write reference_ep.csv, capacity_ep.csv and report.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AdequacyArgs {
    /// Study config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of sampled years.
    #[arg(long)]
    years: Option<usize>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Write study_result.json here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DemoArgs {
    /// Write the example's fleet.csv, reference.csv and trace.csv here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    instances: usize,
}

fn parse_policy(s: &str) -> std::result::Result<Policy, String> {
    s.parse().map_err(|e: ucap::Error| e.to_string())
}

fn parse_basis(s: &str) -> std::result::Result<RechargeBasis, String> {
    match s {
        "stored" => Ok(RechargeBasis::Stored),
        "grid" => Ok(RechargeBasis::Grid),
        _ => Err(format!("expected `stored` or `grid`, got `{s}`")),
    }
}

/// Bad input detected by the CLI itself.
#[derive(Debug)]
struct InputError(String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

/// Failure that is not the input's fault.
#[derive(Debug)]
struct RuntimeError(String);

impl std::fmt::Display for RuntimeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for RuntimeError {}

fn require_file(path: &Path, flag: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(InputError(format!("{flag}: no such file {}", path.display())).into())
    }
}

fn load_inputs(input: &InputArgs) -> Result<(Fleet, StepSignal)> {
    require_file(&input.fleet, "--fleet")?;
    require_file(&input.reference, "--reference")?;
    let fleet = Fleet::from_csv_path(&input.fleet)?;
    let reference = StepSignal::from_csv_path(&input.reference, input.duration)?;
    Ok((fleet, reference))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_with(path: &Path, f: impl FnOnce(fs::File) -> ucap::Result<()>) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    f(file)?;
    Ok(())
}

fn dispatch(args: DispatchArgs) -> Result<()> {
    let (fleet, mut reference) = load_inputs(&args.input)?;
    if let Some(dt) = args.dt {
        reference = reference.refined(dt)?;
    }
    let options = RunOptions {
        recharge: args.recharge,
        recharge_basis: args.recharge_basis,
    };
    let trace = run_dispatch(
        &fleet,
        &fleet.initial_state(),
        &reference,
        args.policy,
        options,
    )?;
    log::info!(
        "{} over {} steps: ENS {} kWh",
        args.policy,
        trace.steps.len(),
        trace.total_ens_kwh
    );
    match args.out_dir {
        Some(dir) => {
            create_dir(&dir)?;
            write_with(&dir.join("trace.csv"), |f| trace.write_csv(f))?;
            write_json(&dir.join("summary.json"), &RunSummary::of(&trace, &fleet))?;
        }
        None => trace.write_csv(io::stdout().lock())?,
    }
    Ok(())
}

fn ep(args: EpArgs) -> Result<()> {
    let (fleet, reference) = load_inputs(&args.input)?;
    let (request, capacity, report) = analyse(&fleet, &fleet.initial_state(), &reference)?;
    if let Some(dir) = args.out_dir {
        create_dir(&dir)?;
        write_with(&dir.join("reference_ep.csv"), |f| request.write_csv(f))?;
        write_with(&dir.join("capacity_ep.csv"), |f| capacity.write_csv(f))?;
        write_json(&dir.join("report.json"), &report)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn adequacy(args: AdequacyArgs) -> Result<()> {
    require_file(&args.config, "--config")?;
    let mut study = StudyConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        study.seed = seed;
    }
    if let Some(years) = args.years {
        if years < 1 {
            return Err(InputError("--years must be at least 1".into()).into());
        }
        study.years = years;
    }
    if let Some(workers) = args.workers {
        study.workers = workers;
    }
    let result = run_adequacy_study(&study)?;
    print!("{}", result.table());
    println!("dominance violations: {}", result.dominance_violations);
    if let Some(dir) = args.out_dir {
        create_dir(&dir)?;
        write_json(&dir.join("study_result.json"), &result)?;
    }
    Ok(())
}

fn demo_inputs() -> (Fleet, StepSignal) {
    let fleet = Fleet::new(vec![
        Device::new("d1", 2.0, 8.0, 8.0),
        Device::new("d2", 4.0, 12.0, 12.0),
        Device::new("d3", 3.0, 6.0, 6.0),
        Device::new("d4", 7.0, 7.0, 7.0),
    ]);
    let reference =
        StepSignal::from_samples(&[4.0, 18.0, 12.0, 1.0], 1.0, 0.0).expect("valid samples");
    (fleet, reference)
}

// values in the step table are printed rounded to 1e-6, without `-0`
fn num(v: f64) -> String {
    format!("{}", (v * 1e6).round() / 1e6 + 0.0)
}

fn step_table(trace: &RunTrace, fleet: &Fleet) -> String {
    let n = trace.steps.len();
    let mut rows: Vec<(String, &str, String, Vec<String>)> = Vec::new();
    let cols = |f: &dyn Fn(usize) -> f64| (0..n).map(|k| num(f(k))).collect::<Vec<_>>();
    rows.push((
        "P^r".into(),
        "kW",
        String::new(),
        cols(&|k| trace.steps[k].request_kw),
    ));
    for i in 0..fleet.len() {
        rows.push((
            format!("x_{}", i + 1),
            "h",
            String::new(),
            cols(&|k| trace.state_before(k)[i]),
        ));
    }
    rows.push((
        "z_hat".into(),
        "h",
        String::new(),
        (0..n)
            .map(|k| trace.steps[k].z_hat.map_or("-".into(), num))
            .collect(),
    ));
    for (i, d) in fleet.devices.iter().enumerate() {
        rows.push((
            format!("u_{}", i + 1),
            "kW",
            num(d.max_discharge),
            cols(&|k| trace.steps[k].u[i]),
        ));
    }
    rows.push((
        "ENS".into(),
        "kWh",
        String::new(),
        cols(&|k| trace.steps[k].ens_kwh),
    ));

    let mut out = format!("{:<10}{:<6}{:>6}", "variable", "unit", "limit");
    for k in 1..=n {
        out.push_str(&format!("{k:>8}"));
    }
    out.push('\n');
    for (name, unit, limit, values) in rows {
        out.push_str(&format!("{name:<10}{unit:<6}{limit:>6}"));
        for v in values {
            out.push_str(&format!("{v:>8}"));
        }
        out.push('\n');
    }
    out
}

fn demo(args: DemoArgs) -> Result<()> {
    let (fleet, reference) = demo_inputs();
    let state = fleet.initial_state();
    let trace = run_dispatch(
        &fleet,
        &state,
        &reference,
        Policy::Optimal,
        RunOptions::default(),
    )?;
    let gap = max_energy_gap(&ep_transform(&reference)?, &capacity_curve(&fleet, &state)?);
    let oracle = min_ens_oracle(&fleet, &state, &reference);
    let mut out = io::stdout().lock();
    write!(out, "{}", step_table(&trace, &fleet))?;
    writeln!(
        out,
        "total ENS {} kWh; max energy gap {} kWh; max-flow minimum {} kWh",
        num(trace.total_ens_kwh),
        num(gap),
        num(oracle)
    )?;
    if let Some(dir) = args.out_dir {
        create_dir(&dir)?;
        write_with(&dir.join("fleet.csv"), |f| fleet.write_csv(f))?;
        write_with(&dir.join("reference.csv"), |f| reference.write_csv(f))?;
        write_with(&dir.join("trace.csv"), |f| trace.write_csv(f))?;
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    let report = agreement_suite(args.seed, args.instances, 1e-6)?;
    println!(
        "instances: {}  passed: {}  failed: {}  max error: {:.3e} kWh",
        report.instances, report.passed, report.failed, report.max_abs_error_kwh
    );
    for f in &report.failures {
        println!("  {f}");
    }
    if report.failed > 0 {
        return Err(RuntimeError(format!("{} instances disagree", report.failed)).into());
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<InputError>().is_some() {
        return 1;
    }
    match err.downcast_ref::<ucap::Error>() {
        Some(e) if e.is_validation() => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("UCAP_LOG")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Dispatch(a) => dispatch(a),
        Command::Ep(a) => ep(a),
        Command::Adequacy(a) => adequacy(a),
        Command::Demo(a) => demo(a),
        Command::Verify(a) => verify(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
