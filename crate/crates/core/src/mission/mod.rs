//! Complete missions: headless runs through the simulated link, replay of a
//! recorded log, and the controller benchmark table.

mod operator;
mod runtime;
mod setup;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use operator::{ScriptedOperator, COMMAND_EVERY_MS, MODE_RETRY_MS};
pub use runtime::{mission_id, MissionOutcome, RuntimeOptions, VehicleRuntime, TELEMETRY_EVERY_MS, TICK_MS};
pub use setup::{MissionSetup, LEAD_IN_M, LEAD_OUT_M, PROFILE_DECEL};

use crate::control::{summarize, ControlError, ControllerKind, TrackingReport};
use crate::geometry::GeometryError;
use crate::modes::{FaultKind, OperationMode};
use crate::net::{Channel, ChannelProfile, CommandFrame, TelemetryFrame};
use crate::perception::MarkKind;
use crate::qa::{evaluate_mission, mode_timeline, paint_digest, EndReason, LogError, LogRecord, MissionEvent, MissionLog, QaVerdict};
use crate::scenario::{parse_scenario, LoadedScenario, PaintPattern, Scenario, ScenarioError};
use crate::vehicle::{SimError, VehicleState};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("handshake refused: {0}")]
    Handshake(#[from] crate::net::HandshakeError),
    #[error("mission setup: {0}")]
    Setup(String),
    #[error("replay input: {0}")]
    ReplayInput(String),
    #[error("replay diverged at record {index} (t = {t} s, kind {kind}):\n  recorded: {expected}\n  replayed: {got}")]
    Divergence { index: usize, t: f64, kind: String, expected: String, got: String },
}

/// Summary of one mission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub mission_id: String,
    pub controller: ControllerKind,
    pub end_reason: EndReason,
    pub tracking: TrackingReport,
    pub qa: QaVerdict,
    /// QA verdict against the scenario threshold; true when nothing was to
    /// be painted.
    pub qa_pass: bool,
    pub fault_count: usize,
    pub faults: Vec<FaultKind>,
    pub mode_timeline: Vec<(f64, OperationMode)>,
    pub marks: Vec<(MarkKind, f64)>,
    pub paint_segments: usize,
    pub paint_digest: String,
    pub sim_time_s: f64,
    pub wall_time_s: f64,
}

impl RunReport {
    /// Mission succeeded: no fault and the QA threshold met.
    pub fn success(&self) -> bool {
        self.fault_count == 0 && self.qa_pass
    }
}

#[derive(Debug, Clone)]
pub struct MissionRun {
    pub report: RunReport,
    pub outcome: MissionOutcome,
}

impl RunReport {
    /// Summarizes a finished mission; `wall` is the elapsed wall time.
    pub fn from_outcome(sc: &Scenario, outcome: &MissionOutcome, wall: f64) -> RunReport {
        let records = &outcome.records;
        let qa = evaluate_mission(records, sc.paint.nominal_width, sc.paint.tolerance);
        let qa_pass = sc.paint.pattern == PaintPattern::None || qa.passes(sc.paint.pass_threshold);
        let mission_id = records
            .first()
            .and_then(|r| match &r.event {
                MissionEvent::MissionStart(s) => Some(s.mission_id.clone()),
                _ => None,
            })
            .unwrap_or_default();
        RunReport {
            scenario: sc.name.clone(),
            mission_id,
            controller: sc.controller_kind(),
            end_reason: outcome.end,
            tracking: summarize(&outcome.tracking),
            qa,
            qa_pass,
            fault_count: outcome.faults.len(),
            faults: outcome.faults.iter().map(|f| f.kind).collect(),
            mode_timeline: mode_timeline(records, sc.mission.initial_mode),
            marks: outcome.marks.clone(),
            paint_segments: outcome.paint.len(),
            paint_digest: paint_digest(outcome.paint.segments()),
            sim_time_s: outcome.final_state.clock,
            wall_time_s: wall,
        }
    }
}

/// Channel profiles for the two directions; the downlink uses a derived seed.
pub fn link_profiles(sc: &Scenario) -> (ChannelProfile, ChannelProfile) {
    let up = ChannelProfile {
        base_delay_ms: sc.channel.base_delay_ms,
        jitter_ms: sc.channel.jitter_ms,
        loss_rate: sc.channel.loss_rate,
        seed: sc.seeds.channel,
    };
    let down = ChannelProfile { seed: sc.seeds.channel ^ 0x9e37_79b9_7f4a_7c15, ..up };
    (up, down)
}

/// Runs a mission as fast as possible: scripted operator, simulated link
/// in both directions, vehicle. The log is also written to `log_path`.
pub fn run_headless(loaded: &LoadedScenario, log_path: Option<&Path>) -> Result<MissionRun, MissionError> {
    let wall = Instant::now();
    let sc = &loaded.scenario;
    sc.validate()?;
    let setup = Arc::new(MissionSetup::build(sc)?);
    let log = match log_path {
        Some(p) => MissionLog::create(p)?,
        None => MissionLog::in_memory(),
    };
    let mut vehicle = VehicleRuntime::new(setup.clone(), loaded, log, RuntimeOptions::default())?;
    let mut operator = sc.operator.present.then(|| ScriptedOperator::new(setup.clone(), sc.operator.clone(), sc.mission.speed));
    let (up, down) = link_profiles(sc);
    let mut uplink: Channel<CommandFrame> = Channel::new(up).with_blackouts(sc.channel.blackouts.clone());
    let mut downlink: Channel<TelemetryFrame> = Channel::new(down).with_blackouts(sc.channel.blackouts.clone());
    if operator.is_some() {
        vehicle.connect_local(0)?;
    }
    let mut now = 0u64;
    loop {
        if let Some(op) = operator.as_mut() {
            if now % COMMAND_EVERY_MS == 0 {
                uplink.send(now, op.act(now));
            }
        }
        let delivered = uplink.step(now);
        if let Some(tel) = vehicle.tick(now, delivered)? {
            downlink.send(now, tel);
        }
        for tel in downlink.step(now) {
            if let Some(op) = operator.as_mut() {
                op.receive(tel);
            }
        }
        if vehicle.end().is_some() {
            break;
        }
        now += TICK_MS;
    }
    let outcome = vehicle.finish()?;
    let report = RunReport::from_outcome(sc, &outcome, wall.elapsed().as_secs_f64());
    Ok(MissionRun { report, outcome })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    /// Recorded lines reproduced exactly.
    pub matched: usize,
    /// The log ended without a `mission_end` record.
    pub truncated: bool,
    pub final_state: VehicleState,
    pub paint_digest: String,
}

/// Re-runs the vehicle from a recorded log, feeding back the recorded
/// command frames at their receive times, and checks that every record is
/// reproduced bit for bit. A truncated log is checked up to its last record.
pub fn replay(records: &[LogRecord]) -> Result<ReplayReport, MissionError> {
    let start = match records.first().map(|r| &r.event) {
        Some(MissionEvent::MissionStart(s)) => s.clone(),
        _ => return Err(MissionError::ReplayInput("log does not begin with mission_start".into())),
    };
    let loaded = parse_scenario(&start.scenario_toml, &[], &start.scenario_ref)?;
    let setup = Arc::new(MissionSetup::build(&loaded.scenario)?);
    let mut vehicle = VehicleRuntime::new(setup, &loaded, MissionLog::in_memory(), RuntimeOptions::default())?;
    let truncated = !matches!(records.last().map(|r| &r.event), Some(MissionEvent::MissionEnd(_)));
    let last_ms = (records.last().map_or(0.0, |r| r.t) * 1000.0).round() as u64;

    let mut commands: Vec<(u64, CommandFrame)> = Vec::new();
    let mut session_at = None;
    for r in records {
        match &r.event {
            MissionEvent::CommandRx { frame, .. } => commands.push(((r.t * 1000.0).round() as u64, *frame)),
            MissionEvent::SessionStart { epoch_ms } if session_at.is_none() => session_at = Some(*epoch_ms),
            _ => {}
        }
    }
    let mut next_cmd = 0;
    let mut checked = 0;
    let mut now = 0u64;
    loop {
        if session_at == Some(now) {
            vehicle.connect_local(now)?;
        }
        let mut delivered = Vec::new();
        while next_cmd < commands.len() && commands[next_cmd].0 <= now {
            delivered.push(commands[next_cmd].1);
            next_cmd += 1;
        }
        vehicle.tick(now, delivered)?;
        compare_prefix(records, vehicle.log().records(), &mut checked)?;
        if vehicle.end().is_some() || (truncated && now >= last_ms) {
            break;
        }
        now += TICK_MS;
    }
    if truncated {
        let produced = vehicle.log().records();
        if produced.len() < records.len() {
            let i = produced.len();
            return Err(divergence(i, &records[i], "<nothing>".into()));
        }
        let state = *vehicle.state();
        let digest = paint_digest(vehicle.paint().segments());
        return Ok(ReplayReport { matched: records.len(), truncated, final_state: state, paint_digest: digest });
    }
    let outcome = vehicle.finish()?;
    compare_prefix(records, &outcome.records, &mut checked)?;
    if outcome.records.len() != records.len() {
        let i = outcome.records.len().min(records.len());
        let got = outcome.records.get(i).map_or("<nothing>".into(), LogRecord::to_line);
        let rec = records.get(i).unwrap_or(&outcome.records[i]);
        return Err(divergence(i, rec, got));
    }
    Ok(ReplayReport {
        matched: records.len(),
        truncated,
        final_state: outcome.final_state,
        paint_digest: paint_digest(outcome.paint.segments()),
    })
}

fn divergence(index: usize, rec: &LogRecord, got: String) -> MissionError {
    MissionError::Divergence { index, t: rec.t, kind: rec.event.kind().to_string(), expected: rec.to_line(), got }
}

/// Compares records `checked..` of both logs and advances `checked`.
fn compare_prefix(recorded: &[LogRecord], produced: &[LogRecord], checked: &mut usize) -> Result<(), MissionError> {
    let end = produced.len().min(recorded.len());
    for i in *checked..end {
        let (a, b) = (recorded[i].to_line(), produced[i].to_line());
        if a != b {
            return Err(divergence(i, &recorded[i], b));
        }
    }
    *checked = (*checked).max(end);
    Ok(())
}

/// One row of the controller benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub controller: ControllerKind,
    pub report: Option<TrackingReport>,
    pub end_reason: Option<EndReason>,
    pub faults: usize,
    /// Set when the run diverged or failed.
    pub error: Option<String>,
}

pub const BENCH_CSV_HEADER: &str = "scenario,controller,rms_cross_track,max_cross_track,rms_heading_error,settle_distance,end_reason,faults,error";

impl BenchRow {
    pub fn to_csv(&self) -> String {
        let (a, b, c, d) = self.report.map_or((String::new(), String::new(), String::new(), String::new()), |r| {
            (r.rms_cross_track.to_string(), r.max_cross_track.to_string(), r.rms_heading_error.to_string(), r.settle_distance.to_string())
        });
        let end = self.end_reason.map_or(String::new(), |e| serde_json::to_value(e).unwrap().as_str().unwrap_or("").to_string());
        let err = self.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        format!("{},{},{a},{b},{c},{d},{end},{},{err}", self.scenario, self.controller.name(), self.faults)
    }
}

/// Runs every scenario with every controller (tuned gains). Failures are
/// recorded in the row and do not stop the table.
pub fn benchmark_controllers(scenarios: &[LoadedScenario], controllers: &[ControllerKind]) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for loaded in scenarios {
        for &kind in controllers {
            let run = loaded.with_controller(kind);
            let row = match run_headless(&run, None) {
                Ok(r) => BenchRow {
                    scenario: loaded.scenario.name.clone(),
                    controller: kind,
                    report: Some(r.report.tracking),
                    end_reason: Some(r.report.end_reason),
                    faults: r.report.fault_count,
                    error: None,
                },
                Err(e) => BenchRow {
                    scenario: loaded.scenario.name.clone(),
                    controller: kind,
                    report: None,
                    end_reason: None,
                    faults: 0,
                    error: Some(e.to_string()),
                },
            };
            rows.push(row);
        }
    }
    rows
}

#[cfg(test)]
mod tests;
