//! Batch commands. Each writes only below its output directory.

use std::fs;
use std::path::{Path, PathBuf};

use roadmark::control::ControllerKind;
use roadmark::mission::{benchmark_controllers, replay, run_headless, BenchRow, ReplayReport, RunReport, BENCH_CSV_HEADER};
use roadmark::qa::{export_width_csv, read_log};
use roadmark::scenario::{load_scenario, LoadedScenario, BUNDLED};
use roadmark::vehicle::{constant_steer_nozzle_trace, VehicleParams};

use crate::CliError;

pub const LOG_FILE: &str = "mission.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const WIDTH_FILE: &str = "width.csv";
pub const BENCH_FILE: &str = "bench.csv";
pub const FIXTURE_FILE: &str = "projection_fixtures.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Loads a scenario by path or bundled name, optionally swapping in the
/// tuned gains of another controller.
pub fn load(reference: &str, overrides: &[String], controller: Option<ControllerKind>) -> Result<LoadedScenario, CliError> {
    let loaded = load_scenario(reference, overrides)?;
    Ok(match controller {
        Some(kind) => loaded.with_controller(kind),
        None => loaded,
    })
}

pub fn parse_controller(name: &str) -> Result<ControllerKind, CliError> {
    ControllerKind::parse(name).ok_or_else(|| {
        let known: Vec<&str> = ControllerKind::ALL.iter().map(|k| k.name()).collect();
        CliError::Usage(format!("unknown controller {name:?}; expected one of {}", known.join(", ")))
    })
}

/// `all` or a comma-separated list of controller names.
pub fn parse_controllers(spec: &str) -> Result<Vec<ControllerKind>, CliError> {
    if spec == "all" {
        return Ok(ControllerKind::ALL.to_vec());
    }
    spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_controller).collect()
}

pub struct RunOutput {
    pub report: RunReport,
    pub log_path: PathBuf,
    pub report_path: PathBuf,
}

/// Headless run writing the mission log, the report and the width CSV.
pub fn run(loaded: &LoadedScenario, out: &Path) -> Result<RunOutput, CliError> {
    ensure_dir(out)?;
    let log_path = out.join(LOG_FILE);
    let run = run_headless(loaded, Some(&log_path))?;
    let report_path = out.join(REPORT_FILE);
    write_file(&report_path, &(serde_json::to_string_pretty(&run.report).expect("report serializes") + "\n"))?;
    write_file(&out.join(WIDTH_FILE), &export_width_csv(&run.outcome.records))?;
    Ok(RunOutput { report: run.report, log_path, report_path })
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

/// Cross product of scenarios and controllers; the table goes to
/// `bench.csv` in `out`.
pub fn bench(scenarios: &[String], controllers: &[ControllerKind], out: &Path) -> Result<(Vec<BenchRow>, PathBuf), CliError> {
    let loaded = scenarios.iter().map(|s| load(s, &[], None)).collect::<Result<Vec<_>, _>>()?;
    let rows = benchmark_controllers(&loaded, controllers);
    ensure_dir(out)?;
    let path = out.join(BENCH_FILE);
    write_file(&path, &bench_csv(&rows))?;
    Ok((rows, path))
}

pub fn replay_log(path: &Path) -> Result<ReplayReport, CliError> {
    let records = read_log(path)?;
    Ok(replay(&records)?)
}

/// Width samples of a recorded mission as CSV in `out`.
pub fn export(log: &Path, out: &Path) -> Result<PathBuf, CliError> {
    let records = read_log(log)?;
    ensure_dir(out)?;
    let path = out.join(WIDTH_FILE);
    write_file(&path, &export_width_csv(&records))?;
    Ok(path)
}

/// Steering angles of the exported overlay fixtures.
pub const FIXTURE_STEERS: [f64; 17] = [-0.4, -0.35, -0.3, -0.25, -0.2, -0.15, -0.1, -0.05, 0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4];

/// Constant-steer nozzle traces of the reference machine, 15 m each, for
/// checking the console's projection overlay against the plant.
pub fn fixtures(out: &Path) -> Result<PathBuf, CliError> {
    let params = VehicleParams::default();
    let traces = FIXTURE_STEERS
        .iter()
        .map(|&steer| constant_steer_nozzle_trace(&params, steer, 15.0, 0.25))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    ensure_dir(out)?;
    let path = out.join(FIXTURE_FILE);
    write_file(&path, &(serde_json::to_string_pretty(&traces).expect("traces serialize") + "\n"))?;
    Ok(path)
}

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(name, _)| *name).collect()
}
