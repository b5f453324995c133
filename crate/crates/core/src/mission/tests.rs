use super::*;
use crate::modes::SafeHaltPhase;
use crate::qa::{read_log, records_to_jsonl};
use crate::scenario::{bundled, parse_scenario};

fn load(name: &str, overrides: &[&str]) -> LoadedScenario {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_scenario(bundled(name).unwrap(), &ov, name).unwrap()
}

const NO_PERCEPTION: [&str; 3] = ["perception.width_hz=0", "perception.velocity_hz=0", "perception.detect_hz=0"];

fn with(extra: &[&'static str]) -> Vec<&'static str> {
    NO_PERCEPTION.iter().copied().chain(extra.iter().copied()).collect()
}

fn entered(report: &RunReport, mode: OperationMode) -> Option<f64> {
    report.mode_timeline.iter().find(|(_, m)| *m == mode).map(|(t, _)| *t)
}

#[test]
fn repaint_straight_passes_qa_without_faults() {
    let r = run_headless(&load("repaint_straight", &["perception.velocity_hz=0"]), None).unwrap();
    assert_eq!(r.report.end_reason, EndReason::Completed);
    assert_eq!(r.report.fault_count, 0, "{:?}", r.report.faults);
    assert_eq!(r.report.qa.pass_fraction, Some(1.0));
    assert!(r.report.success());
    // one continuous stroke over the 58 m of old marking (0.2 damage)
    let painted: f64 = r.outcome.paint.segments().iter().map(|s| s.length()).sum();
    assert!((painted - 58.0).abs() < 0.2, "painted {painted}");
}

#[test]
fn headless_runs_are_deterministic() {
    let sc = load("remote_repaint", &NO_PERCEPTION);
    let a = run_headless(&sc, None).unwrap();
    let b = run_headless(&sc, None).unwrap();
    assert_eq!(records_to_jsonl(&a.outcome.records), records_to_jsonl(&b.outcome.records));
    assert_eq!(a.report.paint_digest, b.report.paint_digest);
}

#[test]
fn log_file_matches_memory_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mission.jsonl");
    let sc = load("remote_repaint", &["perception.velocity_hz=0", "perception.detect_hz=0", "perception.width_hz=5"]);
    let run = run_headless(&sc, Some(&path)).unwrap();
    let records = read_log(&path).unwrap();
    assert_eq!(records_to_jsonl(&records), records_to_jsonl(&run.outcome.records));
    let rep = replay(&records).unwrap();
    assert!(!rep.truncated);
    assert_eq!(rep.matched, records.len());
    assert_eq!(rep.paint_digest, run.report.paint_digest);
    assert_eq!(rep.final_state, run.outcome.final_state);
}

#[test]
fn truncated_log_replays_its_prefix() {
    let run = run_headless(&load("remote_repaint", &NO_PERCEPTION), None).unwrap();
    let records = &run.outcome.records;
    let cut = records.iter().position(|r| r.t > 12.0).unwrap();
    let rep = replay(&records[..cut]).unwrap();
    assert!(rep.truncated);
    assert_eq!(rep.matched, cut);
}

#[test]
fn tampered_command_is_reported() {
    let run = run_headless(&load("remote_repaint", &NO_PERCEPTION), None).unwrap();
    let mut records = run.outcome.records.clone();
    let i = records
        .iter()
        .position(|r| r.t > 5.0 && matches!(r.event, MissionEvent::CommandRx { applied: true, .. }))
        .unwrap();
    if let MissionEvent::CommandRx { frame, .. } = &mut records[i].event {
        frame.steer_cmd += 0.05;
    }
    match replay(&records) {
        Err(MissionError::Divergence { index, .. }) => assert!(index > i),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn replay_rejects_log_without_start() {
    let run = run_headless(&load("remote_repaint", &with(&["duration_s=2"])), None).unwrap();
    assert!(matches!(replay(&run.outcome.records[1..]), Err(MissionError::ReplayInput(_))));
}

#[test]
fn blackout_enters_safe_halt_within_timeout() {
    let r = run_headless(&load("link_blackout", &NO_PERCEPTION), None).unwrap();
    let t = entered(&r.report, OperationMode::SafeHalt).unwrap();
    assert!(t > 30.0 && t <= 30.45, "SafeHalt at {t}");
    assert_eq!(r.report.faults, vec![FaultKind::LinkTimeout]);
    assert_eq!(r.report.end_reason, EndReason::Secured);
    assert!(r.outcome.paint.segments().iter().all(|s| s.t_end <= t + 1e-9));
    assert!(!r.report.success());
}

#[test]
fn steering_bias_trips_path_deviation() {
    let r = run_headless(&load("path_deviation", &NO_PERCEPTION), None).unwrap();
    assert_eq!(r.report.faults, vec![FaultKind::PathDeviation]);
    assert!(r.report.tracking.max_cross_track <= 0.5 + 0.05);
    let halt = entered(&r.report, OperationMode::SafeHalt).unwrap();
    let phases: Vec<_> = r
        .outcome
        .records
        .iter()
        .filter_map(|rec| match rec.event {
            MissionEvent::SafeHaltPhase { phase } => Some((rec.t, phase)),
            _ => None,
        })
        .collect();
    assert_eq!(phases.last().unwrap().1, SafeHaltPhase::Secured);
    assert!(phases[0].0 >= halt);
}

#[test]
fn scripted_estop_halts_the_machine() {
    let sc = load("repaint_straight", &with(&["operator.script=[{t=0.5, mode=\"remote_assistance_drive\"}, {t=1.0, mode=\"remote_monitoring\"}, {t=8.0, estop=true}]"]));
    let r = run_headless(&sc, None).unwrap();
    assert_eq!(r.report.faults, vec![FaultKind::Estop]);
    let t = entered(&r.report, OperationMode::SafeHalt).unwrap();
    // command period plus no link delay
    assert!((8.0..=8.06).contains(&t), "SafeHalt at {t}");
    assert!(r.outcome.final_state.speed.abs() < 1e-9);
    assert!(!r.outcome.final_state.gun_trigger);
}

#[test]
fn without_operator_the_machine_waits() {
    let r = run_headless(&load("repaint_straight", &with(&["operator.present=false", "duration_s=5"])), None).unwrap();
    assert_eq!(r.report.end_reason, EndReason::Timeout);
    assert_eq!(r.report.mode_timeline, vec![(0.0, OperationMode::RemoteDriving)]);
    assert_eq!(r.outcome.final_state.speed, 0.0);
    assert!(r.outcome.paint.segments().is_empty());
    assert_eq!(r.report.fault_count, 0);
}

#[test]
fn mission_id_depends_on_content() {
    let a = load("repaint_straight", &[]);
    let b = load("repaint_straight", &["mission.speed=2.0"]);
    assert_eq!(mission_id(&a.resolved_toml, &a.source_ref), mission_id(&a.resolved_toml, &a.source_ref));
    assert_ne!(mission_id(&a.resolved_toml, &a.source_ref), mission_id(&b.resolved_toml, &b.source_ref));
}

#[test]
fn bench_table_shape_and_determinism() {
    let sc = vec![load("link_blackout", &with(&["duration_s=20", "channel.blackouts=[]"]))];
    let a = benchmark_controllers(&sc, &ControllerKind::ALL);
    let b = benchmark_controllers(&sc, &ControllerKind::ALL);
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    for row in &a {
        assert!(row.error.is_none(), "{row:?}");
        // straight road, exact guidance
        assert!(row.report.unwrap().rms_cross_track < 1e-3, "{row:?}");
        assert_eq!(row.to_csv().split(',').count(), BENCH_CSV_HEADER.split(',').count());
    }
}

#[test]
fn bench_records_failures_and_continues() {
    let mut bad = load("link_blackout", &with(&["duration_s=5"]));
    bad.scenario.mission.speed = f64::NAN;
    let good = load("link_blackout", &with(&["duration_s=5"]));
    let rows = benchmark_controllers(&[bad, good], &[ControllerKind::Pid]);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].error.is_some());
    assert!(rows[1].error.is_none());
}
