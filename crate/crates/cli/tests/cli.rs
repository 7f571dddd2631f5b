use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ucap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ucap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn data(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .display()
        .to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn row<'a>(text: &'a str, name: &str) -> Vec<&'a str> {
    text.lines()
        .find(|l| l.split_whitespace().next() == Some(name))
        .unwrap_or_else(|| panic!("no `{name}` row in\n{text}"))
        .split_whitespace()
        .skip(2)
        .collect()
}

#[test]
fn demo_prints_the_worked_example() {
    let o = ucap(&["demo"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(row(&text, "z_hat"), ["2.5", "0", "0", "0.5"]);
    assert_eq!(row(&text, "ENS"), ["0", "2", "3", "0"]);
    // u rows carry the limit column first
    assert_eq!(row(&text, "u_4"), ["7", "0", "7", "0", "0"]);
    assert!(text.contains("total ENS 5 kWh"));
}

#[test]
fn ep_on_demo_data() {
    let o = ucap(&[
        "ep",
        "--fleet",
        &data("example_fleet.csv"),
        "--reference",
        &data("example_reference.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["gap_kwh"], 5.0);
    assert_eq!(report["shave_level_kw"], 13.0);
    assert_eq!(report["classification"], "power_and_energy");
    assert_eq!(report["feasible"], false);
}

#[test]
fn demo_files_feed_back_into_ep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    assert!(ucap(&["demo", "--out-dir", &out]).status.success());
    let o = ucap(&[
        "ep",
        "--fleet",
        &format!("{out}/fleet.csv"),
        "--reference",
        &format!("{out}/reference.csv"),
        "--out-dir",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in [
        "trace.csv",
        "reference_ep.csv",
        "capacity_ep.csv",
        "report.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f} missing");
    }
}

#[test]
fn dispatch_with_empty_reference_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let reference = dir.path().join("empty.csv");
    std::fs::write(&reference, "t_start_h,power_kw\n").unwrap();
    let o = ucap(&[
        "dispatch",
        "--fleet",
        &data("example_fleet.csv"),
        "--reference",
        &reference.display().to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("t,request_kw,served_kw,ens_kwh,u_d1"));
}

#[test]
fn dispatch_writes_trace_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().display().to_string();
    let o = ucap(&[
        "dispatch",
        "--fleet",
        &data("example_fleet.csv"),
        "--reference",
        &data("example_reference.csv"),
        "--policy",
        "peak_shaving",
        "--dt",
        "0.5",
        "--out-dir",
        &out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
            .unwrap();
    assert!((summary["ens_kwh"].as_f64().unwrap() - 5.0).abs() < 1e-9);
    assert_eq!(summary["steps"], 8);
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 9);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let args = [
        "dispatch",
        "--fleet",
        &data("example_fleet.csv"),
        "--reference",
        &data("example_reference.csv"),
        "--policy",
        "pd",
    ];
    assert_eq!(ucap(&args).stdout, ucap(&args).stdout);
}

#[test]
fn usage_errors_exit_one_and_name_the_flag() {
    let o = ucap(&[
        "dispatch",
        "--fleet",
        "a.csv",
        "--reference",
        "b.csv",
        "--bogus",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));

    let o = ucap(&[
        "dispatch",
        "--fleet",
        &data("example_fleet.csv"),
        "--reference",
        &data("example_reference.csv"),
        "--policy",
        "greedy",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--policy"));

    let o = ucap(&["ep", "--fleet", "missing.csv", "--reference", "missing.csv"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--fleet"));

    assert_eq!(ucap(&[]).status.code(), Some(1));
    assert_eq!(ucap(&["--help"]).status.code(), Some(0));
}

#[test]
fn invalid_fleet_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let fleet = dir.path().join("fleet.csv");
    std::fs::write(
        &fleet,
        "id,max_discharge_kw,energy_kwh,capacity_kwh,max_charge_kw,efficiency\na,-1,1,1,-1,1\n",
    )
    .unwrap();
    let o = ucap(&[
        "ep",
        "--fleet",
        &fleet.display().to_string(),
        "--reference",
        &data("example_reference.csv"),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("invalid fleet"));
}

fn small_study(dir: &Path) -> String {
    std::fs::copy(data("storage_fleet.csv"), dir.join("fleet.csv")).unwrap();
    let config = dir.join("study.json");
    std::fs::write(
        &config,
        r#"{
            "years": 8, "seed": 5, "hours_per_year": 720,
            "generators": [
                {"unit_capacity_mw": 100, "unit_count": 10, "availability": 0.9, "mtbf_h": 2000},
                {"unit_capacity_mw": 30, "unit_count": 20, "availability": 0.9, "mtbf_h": 2000},
                {"unit_capacity_mw": 10, "unit_count": 40, "availability": 0.95, "mtbf_h": 1000}
            ],
            "demand": {"synthetic": {"base_mw": 1505}},
            "storage_fleet": "fleet.csv"
        }"#,
    )
    .unwrap();
    config.display().to_string()
}

#[test]
fn adequacy_is_deterministic_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_study(dir.path());
    let run = |workers: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = ucap(&[
            "adequacy",
            "--config",
            &config,
            "--workers",
            workers,
            "--out-dir",
            &out.display().to_string(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("Optimal Policy"));
        std::fs::read(out.join("study_result.json")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));
}

#[test]
fn adequacy_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("study.json");
    std::fs::write(
        &config,
        r#"{"years": 3, "demand": {"synthetic": {"base_mw": 1}}, "storage_fleet": "nope.csv"}"#,
    )
    .unwrap();
    let o = ucap(&["adequacy", "--config", &config.display().to_string()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.csv"));
}

#[test]
fn verify_reports_agreement() {
    let o = ucap(&["verify", "--instances", "40", "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("passed: 40  failed: 0"));
}
