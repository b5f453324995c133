use std::net::TcpListener;
use std::path::Path;
use std::process::{Command, Output};

const FAST: [&str; 6] = [
    "--override",
    "perception.width_hz=0",
    "--override",
    "perception.velocity_hz=0",
    "--override",
    "perception.detect_hz=0",
];

fn roadmark(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roadmark")).args(args).env_remove("ROADMARK_OUT_DIR").output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn run_fast(scenario: &str, out: &Path) -> Output {
    let mut args = vec!["run", scenario, "--out", out.to_str().unwrap()];
    args.extend(FAST);
    roadmark(&args)
}

#[test]
fn list_shows_bundled_scenarios() {
    let out = roadmark(&["list"]);
    assert_eq!(code(&out), 0);
    let names = stdout(&out);
    for n in ["repaint_straight", "link_blackout", "gps_country_road"] {
        assert!(names.lines().any(|l| l == n), "{n} missing from {names}");
    }
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(code(&roadmark(&[])), 2);
    assert_eq!(code(&roadmark(&["run"])), 2);
    assert_eq!(code(&roadmark(&["frobnicate"])), 2);
    assert_eq!(code(&roadmark(&["run", "repaint_straight", "--controller", "bang_bang"])), 2);
    assert_eq!(code(&roadmark(&["run", "repaint_straight", "--override", "mission.speed"])), 2);
    assert_eq!(code(&roadmark(&["serve", "repaint_straight", "--channel", "fast"])), 2);
    assert_eq!(code(&roadmark(&["--help"])), 0);
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nname = [unclosed\n").unwrap();
    let out = roadmark(&["run", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line"), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(&bad, "version = 1\nname = \"x\"\nduration_s = -1.0\n").unwrap();
    assert_eq!(code(&roadmark(&["run", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()])), 2);
}

#[test]
fn missing_scenario_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = roadmark(&["run", "no/such/scenario.toml", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert_eq!(code(&roadmark(&["replay", "no/such/mission.jsonl"])), 3);
}

#[test]
fn faulted_run_writes_outputs_and_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_fast("path_deviation", dir.path());
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["fault_count"].as_u64().unwrap() > 0);
    assert_eq!(report["scenario"], "path_deviation");
    let log = std::fs::read_to_string(dir.path().join("mission.jsonl")).unwrap();
    assert!(log.lines().next().unwrap().contains("\"kind\":\"mission_start\""));
    assert!(log.lines().last().unwrap().contains("\"kind\":\"mission_end\""));
    assert!(dir.path().join("width.csv").is_file());
}

#[test]
fn successful_run_exits_0_and_honours_the_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "remote_repaint", "--override", "perception.velocity_hz=0"];
    args.extend(&FAST[2..]);
    let out = Command::new(env!("CARGO_BIN_EXE_roadmark")).args(&args).env("ROADMARK_OUT_DIR", dir.path()).output().unwrap();
    assert_eq!(code(&out), 0, "{}{}", stdout(&out), String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("mission.jsonl").is_file());
}

#[test]
fn replay_accepts_its_log_and_flags_tampering() {
    let dir = tempfile::tempdir().unwrap();
    run_fast("path_deviation", dir.path());
    let log = dir.path().join("mission.jsonl");
    let out = roadmark(&["replay", log.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("paint digest"));

    // flip the e-stop bit of one applied command mid-mission
    let text = std::fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let i = lines
        .iter()
        .position(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            v["kind"] == "command_rx" && v["payload"]["applied"] == true && v["t"].as_f64().unwrap() > 1.0
        })
        .unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&lines[i]).unwrap();
    v["payload"]["frame"]["estop"] = true.into();
    lines[i] = serde_json::to_string(&v).unwrap();
    let tampered = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered, lines.join("\n") + "\n").unwrap();
    assert_eq!(code(&roadmark(&["replay", tampered.to_str().unwrap()])), 4);

    let garbage = dir.path().join("garbage.jsonl");
    std::fs::write(&garbage, "{\"t\": oops\n").unwrap();
    assert_eq!(code(&roadmark(&["replay", garbage.to_str().unwrap()])), 2);
}

#[test]
fn export_writes_width_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["run", "repaint_straight", "--out", dir.path().to_str().unwrap(), "--override", "duration_s=4"];
    args.extend(&FAST[2..]);
    roadmark(&args);
    let out_dir = dir.path().join("export");
    let out = roadmark(&["export", dir.path().join("mission.jsonl").to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(out_dir.join("width.csv")).unwrap();
    assert!(csv.lines().count() > 10, "{csv}");
}

#[test]
fn bench_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let out = roadmark(&["bench", "path_deviation", "pure_pursuit,stanley", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[0].starts_with("scenario,controller,"));
    assert!(lines[1].starts_with("path_deviation,pure_pursuit,"));
    assert!(lines[2].starts_with("path_deviation,stanley,"));
}

#[test]
fn serve_reports_a_busy_port_with_exit_3() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    let out = roadmark(&["serve", "repaint_straight", "--port", &port]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn serve_lockstep_over_a_lossy_channel_exits_2() {
    let out = roadmark(&["serve", "repaint_straight", "--port", "1", "--lockstep", "--channel", "cellular"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn fixtures_cover_the_steering_range() {
    let dir = tempfile::tempdir().unwrap();
    let out = roadmark(&["fixtures", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let traces: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("projection_fixtures.json")).unwrap()).unwrap();
    let traces = traces.as_array().unwrap();
    assert_eq!(traces.len(), 17);
    assert_eq!(traces[0]["steer"], -0.4);
    assert_eq!(traces[16]["steer"], 0.4);
    assert_eq!(traces[8]["points"].as_array().unwrap().len(), 61);
}
