//! Scripted remote operator. It sees the vehicle only through (delayed)
//! telemetry and answers with a command every 50 ms.

use std::sync::Arc;

use super::runtime::project_tracked;
use super::setup::{MissionSetup, PROFILE_DECEL};
use crate::control::pure_pursuit_from;
use crate::geometry::Vec2;
use crate::modes::{OperationMode, SafeHaltPhase};
use crate::net::{CommandFrame, LatestWins, TelemetryFrame};
use crate::scenario::{OperatorSpec, ScriptEntry};

pub const COMMAND_EVERY_MS: u64 = 50;
/// A mode request is repeated until telemetry confirms it, up to this long.
pub const MODE_RETRY_MS: u64 = 2000;

#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    setup: Arc<MissionSetup>,
    spec: OperatorSpec,
    speed: f64,
    seq: u32,
    latest: LatestWins,
    telemetry: Option<TelemetryFrame>,
    next_entry: usize,
    pending_mode: Option<(OperationMode, u64)>,
    estop: bool,
    tracked_hint: Option<f64>,
    line_hint: Option<f64>,
}

impl ScriptedOperator {
    pub fn new(setup: Arc<MissionSetup>, spec: OperatorSpec, speed: f64) -> Self {
        Self {
            setup,
            spec,
            speed,
            seq: 0,
            latest: LatestWins::default(),
            telemetry: None,
            next_entry: 0,
            pending_mode: None,
            estop: false,
            tracked_hint: None,
            line_hint: None,
        }
    }

    /// Keeps the newest telemetry frame.
    pub fn receive(&mut self, frame: TelemetryFrame) {
        if self.latest.accept(frame.seq) {
            self.telemetry = Some(frame);
        }
    }

    pub fn telemetry(&self) -> Option<&TelemetryFrame> {
        self.telemetry.as_ref()
    }

    fn run_script(&mut self, now_ms: u64) {
        while let Some(ScriptEntry { t, mode, estop }) = self.spec.script.get(self.next_entry).copied() {
            if (t * 1000.0).round() as u64 > now_ms {
                break;
            }
            self.next_entry += 1;
            if estop {
                self.estop = true;
            }
            if let Some(m) = mode {
                self.pending_mode = Some((m, now_ms + MODE_RETRY_MS));
            }
        }
    }

    /// The command for `now_ms` (a multiple of 50 ms).
    pub fn act(&mut self, now_ms: u64) -> CommandFrame {
        self.run_script(now_ms);
        let tel = self.telemetry.clone();
        let mode_now = tel.as_ref().map(|t| t.mode);
        if self.estop && mode_now == Some(OperationMode::SafeHalt) {
            self.estop = false;
        }
        if let Some((m, deadline)) = self.pending_mode {
            if mode_now == Some(m) || now_ms > deadline {
                self.pending_mode = None;
            }
        }
        self.seq = self.seq.wrapping_add(1);
        let mut cmd = CommandFrame {
            seq: self.seq,
            sent_at: now_ms,
            gun_height_cmd: self.setup.nominal_height,
            mode_request: self.pending_mode.map(|p| p.0),
            estop: self.estop,
            ..Default::default()
        };
        let Some(tel) = tel else {
            return cmd;
        };
        let params = &self.setup.params;
        let pose = tel.pose;
        let f = project_tracked(&self.setup.tracked, pose.position(), pose.heading, &mut self.tracked_hint);
        cmd.steer_cmd = pure_pursuit_from(&pose, &self.setup.tracked, f.s, self.spec.lookahead_m, params.wheelbase, params.max_steer);
        let (gx, gy) = params.gun_mount;
        let gun = pose.transform_point(Vec2::new(gx, gy + tel.gun_lateral));
        let s_gun = project_tracked(&self.setup.line, gun, pose.heading, &mut self.line_hint).s;
        let halted = tel.mode == OperationMode::SafeHalt && tel.safe_halt_phase != Some(SafeHaltPhase::Secured);
        if !halted {
            cmd.speed_cmd = self.setup.speed_profile(s_gun, self.speed, PROFILE_DECEL);
            cmd.trigger_cmd = tel.speed > 0.05 && s_gun < self.setup.s_stop && self.setup.in_paint_interval(s_gun);
        }
        cmd
    }
}
