//! Vehicle side of a mission: link supervision, perception, control, the
//! mode machine and the plant, advanced in fixed 10 ms ticks.

use std::sync::Arc;

use super::setup::{MissionSetup, PROFILE_DECEL};
use super::MissionError;
use crate::control::{speed_control, ControllerKind, GunCompensator, LateralController, SpeedLimits, TrackingSample};
use crate::geometry::{PathPolyline, Pose2D, Vec2};
use crate::modes::{
    spray_permission, DeviationMonitor, FaultEvent, FaultKind, FaultOutcome, ModeMachine, OperationMode, RequestSource,
    SafeHaltPhase, SprayActor, TransitionRequest,
};
use crate::net::session::operator_hello;
use crate::net::wire::{Hello, Welcome};
use crate::net::{heartbeat_supervise, CameraId, CommandFrame, LatestWins, TelemetryFrame, VehicleEndpoint};
use crate::perception::{
    estimate_line_width, gun_offset_from_detection, lk_velocity, measure_marks_and_gaps, CameraSpec, ClassicalDetector,
    FlowParams, GroundRaster, GunCalibration, MarkKind, MarkingDetector, PresenceRule, RenderOptions, Scene,
    VelocityEstimate, WidthSample, render_ground,
};
use crate::qa::{paint_digest, EndReason, LogRecord, MissionEnd, MissionEvent, MissionLog, MissionStart, LOG_FORMAT_VERSION};
use crate::scenario::{GunCompensation, LoadedScenario, Scenario};
use crate::vehicle::{self, ControlInput, PaintRecord, PaintSegment, VehicleState, PLANT_DT, STANDSTILL_SPEED};

pub const TICK_MS: u64 = 10;
pub const TELEMETRY_EVERY_MS: u64 = 50;
/// A camera outage longer than this raises `sensor_stale`.
pub const SENSOR_STALE_AFTER_S: f64 = 0.5;
/// Lateral reach of the "paint under the camera" test.
const PAINTED_RADIUS_M: f64 = 0.2;
/// Along-track offsets (from the camera centre) that must both lie on paint.
const PAINTED_PROBE_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RuntimeOptions {
    /// End the mission once Safe Halt is secured (headless). A served
    /// vehicle keeps running so the operator can recover it.
    pub end_on_secured: bool,
    /// Keep the latest camera rasters for thumbnails.
    pub keep_rasters: bool,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self { end_on_secured: true, keep_rasters: false }
    }
}

/// What a finished runtime hands back.
#[derive(Debug, Clone)]
pub struct MissionOutcome {
    pub end: EndReason,
    pub records: Vec<LogRecord>,
    pub paint: PaintRecord,
    pub tracking: Vec<TrackingSample>,
    pub final_state: VehicleState,
    pub marks: Vec<(MarkKind, f64)>,
    pub faults: Vec<FaultEvent>,
}

#[derive(Debug, Clone, Copy, Default)]
struct DropoutState {
    since: Option<f64>,
    stale_raised: bool,
}

pub struct VehicleRuntime {
    setup: Arc<MissionSetup>,
    sc: Scenario,
    opts: RuntimeOptions,
    state: VehicleState,
    prev_pose: Pose2D,
    modes: ModeMachine,
    endpoint: VehicleEndpoint,
    latest: LatestWins,
    op_cmd: Option<CommandFrame>,
    last_estop: bool,
    ctrl: LateralController,
    limits: SpeedLimits,
    input: ControlInput,
    comp: GunCompensator,
    pending_offset: Option<f64>,
    deviation: DeviationMonitor,
    scene: Scene,
    paint: PaintRecord,
    paint_fault_raised: bool,
    log: MissionLog,
    injected: Vec<(u64, FaultKind)>,
    fault_buffer: Vec<FaultKind>,
    faults: Vec<FaultEvent>,
    frame_index: u64,
    last_width: Option<WidthSample>,
    last_velocity: Option<VelocityEstimate>,
    odometry: f64,
    line_hint: Option<f64>,
    truth_hint: Option<f64>,
    tracking: Vec<TrackingSample>,
    width_log: Vec<(WidthSample, f64)>,
    tel_seq: u32,
    dropout: DropoutState,
    down_spec: CameraSpec,
    fwd_spec: CameraSpec,
    calib: GunCalibration,
    detector: ClassicalDetector,
    down_raster: Option<GroundRaster>,
    fwd_raster: Option<GroundRaster>,
    logged_phase: Option<SafeHaltPhase>,
    now_ms: Option<u64>,
    end: Option<EndReason>,
}

fn period_ms(hz: f64) -> Option<u64> {
    (hz > 0.0).then(|| ((1000.0 / hz / TICK_MS as f64).round().max(1.0) as u64) * TICK_MS)
}

fn due(now_ms: u64, hz: u32) -> bool {
    period_ms(hz as f64).is_some_and(|p| now_ms % p == 0)
}

/// Stable mission id derived from the resolved scenario text.
pub fn mission_id(resolved_toml: &str, source_ref: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in resolved_toml.bytes().chain([0u8]).chain(source_ref.bytes()) {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("m-{h:016x}")
}

impl VehicleRuntime {
    /// Creates the runtime and writes the `mission_start` record.
    pub fn new(setup: Arc<MissionSetup>, loaded: &LoadedScenario, mut log: MissionLog, opts: RuntimeOptions) -> Result<Self, MissionError> {
        let sc = loaded.scenario.clone();
        let params = setup.params;
        let mut state = VehicleState::at_rest(setup.start_pose, &params);
        state.gun_height = setup.nominal_height.clamp(params.gun_height_min, params.gun_height_max);
        state.paint_volume = sc.paint.paint_volume_l;
        log.append(
            0.0,
            MissionEvent::MissionStart(MissionStart {
                log_version: LOG_FORMAT_VERSION,
                mission_id: mission_id(&loaded.resolved_toml, &loaded.source_ref),
                scenario_ref: loaded.source_ref.clone(),
                scenario_toml: loaded.resolved_toml.clone(),
            }),
        )?;
        let mut injected: Vec<(u64, FaultKind)> = sc.faults.inject.iter().map(|f| ((f.t * 1000.0).round() as u64, f.kind)).collect();
        injected.sort_by_key(|f| f.0);
        let fwd_spec = CameraSpec::forward(&params);
        Ok(Self {
            prev_pose: state.pose,
            modes: ModeMachine::new(sc.mission.initial_mode, params),
            endpoint: VehicleEndpoint::new(),
            latest: LatestWins::default(),
            op_cmd: None,
            last_estop: false,
            ctrl: LateralController::new(sc.mission.controller)?,
            limits: SpeedLimits::from_params(&params),
            input: ControlInput::hold(&state),
            comp: GunCompensator::new(params.gun_lateral_travel),
            pending_offset: None,
            deviation: DeviationMonitor { bound: sc.mission.deviation_bound },
            scene: setup.scene.clone(),
            paint: PaintRecord::new(),
            paint_fault_raised: false,
            log,
            injected,
            fault_buffer: Vec::new(),
            faults: Vec::new(),
            frame_index: 0,
            last_width: None,
            last_velocity: None,
            odometry: 0.0,
            line_hint: None,
            truth_hint: None,
            tracking: Vec::new(),
            width_log: Vec::new(),
            tel_seq: 0,
            dropout: DropoutState::default(),
            down_spec: CameraSpec::down(&params),
            calib: GunCalibration::for_camera(&fwd_spec, &params),
            fwd_spec,
            detector: ClassicalDetector::new(setup.expected_line_width),
            down_raster: None,
            fwd_raster: None,
            logged_phase: None,
            now_ms: None,
            end: None,
            state,
            sc,
            opts,
            setup,
        })
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn mode(&self) -> OperationMode {
        self.modes.mode()
    }

    pub fn halt_phase(&self) -> Option<SafeHaltPhase> {
        self.modes.halt_phase()
    }

    pub fn endpoint(&self) -> &VehicleEndpoint {
        &self.endpoint
    }

    pub fn end(&self) -> Option<EndReason> {
        self.end
    }

    pub fn log(&self) -> &MissionLog {
        &self.log
    }

    pub fn paint(&self) -> &PaintRecord {
        &self.paint
    }

    pub fn setup(&self) -> &MissionSetup {
        &self.setup
    }

    pub fn down_raster(&self) -> Option<&GroundRaster> {
        self.down_raster.as_ref()
    }

    pub fn forward_raster(&self) -> Option<&GroundRaster> {
        self.fwd_raster.as_ref()
    }

    /// Admits an operator. A refused handshake comes back as
    /// [`MissionError::Handshake`] and is not logged.
    pub fn connect(&mut self, hello: &Hello, now_ms: u64) -> Result<Welcome, MissionError> {
        let w = self.endpoint.accept(hello, now_ms, self.modes.mode())?;
        let t = now_ms as f64 / 1000.0;
        self.log.append(t, MissionEvent::SessionStart { epoch_ms: now_ms })?;
        Ok(w)
    }

    /// Admits the standard operator handshake (headless runs and replay).
    pub fn connect_local(&mut self, now_ms: u64) -> Result<(), MissionError> {
        self.connect(&operator_hello(), now_ms).map(|_| ())
    }

    /// Advances the vehicle by one 10 ms tick. Returns a telemetry frame on
    /// telemetry ticks.
    pub fn tick(&mut self, now_ms: u64, delivered: Vec<CommandFrame>) -> Result<Option<TelemetryFrame>, MissionError> {
        if now_ms % TICK_MS != 0 || self.now_ms.is_some_and(|p| now_ms != p + TICK_MS) {
            return Err(MissionError::Setup(format!("tick at {now_ms} ms out of sequence")));
        }
        if self.end.is_some() {
            return Err(MissionError::Setup("mission already ended".into()));
        }
        self.now_ms = Some(now_ms);
        let t = now_ms as f64 / 1000.0;

        while self.injected.first().is_some_and(|f| f.0 <= now_ms) {
            let (_, kind) = self.injected.remove(0);
            self.raise_fault(t, FaultEvent { kind, detail: "injected".into(), timestamp: t })?;
        }
        for cmd in delivered {
            self.on_command(now_ms, t, cmd)?;
        }
        if let Some(session) = self.endpoint.session_mut() {
            if let Some(f) = heartbeat_supervise(session, now_ms, self.sc.mission.link_timeout_ms) {
                self.raise_fault(t, f)?;
            }
        }

        self.perceive(now_ms, t)?;
        let ctrl_ms = period_ms(self.sc.mission.controller.rate_hz).unwrap_or(TICK_MS);
        if now_ms % ctrl_ms == 0 {
            self.control(t, ctrl_ms as f64 / 1000.0)?;
        }
        if let Some(input) = self.modes.tick_halt(&self.state, PLANT_DT) {
            self.input = input;
        }
        self.log_halt_phase(t)?;

        let before = self.state;
        let (next, seg) = vehicle::step(&self.state, &self.input, PLANT_DT, &self.setup.params)?;
        self.prev_pose = before.pose;
        self.state = next;
        self.odometry += next.pose.position().distance(before.pose.position());
        self.log.append(t, MissionEvent::Odometry { distance: self.odometry, speed: next.speed })?;
        if let Some(seg) = seg {
            self.on_paint(t, seg)?;
        }
        if self.input.trigger_cmd && self.state.paint_volume <= 0.0 && !self.paint_fault_raised {
            self.paint_fault_raised = true;
            self.raise_fault(t, FaultEvent { kind: FaultKind::PaintFault, detail: "paint tank empty".into(), timestamp: t })?;
        }

        let telemetry = (now_ms % TELEMETRY_EVERY_MS == 0).then(|| self.telemetry(now_ms));
        self.check_end(t);
        Ok(telemetry)
    }

    fn on_command(&mut self, now_ms: u64, t: f64, cmd: CommandFrame) -> Result<(), MissionError> {
        let live = self.endpoint.session_mut().is_some_and(|s| s.on_command(now_ms));
        let applied = live && self.latest.accept(cmd.seq);
        self.log.append(t, MissionEvent::CommandRx { frame: cmd, applied })?;
        if !applied {
            return Ok(());
        }
        self.op_cmd = Some(cmd);
        if cmd.estop && !self.last_estop {
            self.raise_fault(t, FaultEvent { kind: FaultKind::Estop, detail: format!("operator estop in command {}", cmd.seq), timestamp: t })?;
        }
        self.last_estop = cmd.estop;
        if let Some(target) = cmd.mode_request.filter(|m| *m != self.modes.mode()) {
            self.request_mode(t, target, RequestSource::Operator)?;
        }
        Ok(())
    }

    fn request_mode(&mut self, t: f64, target: OperationMode, source: RequestSource) -> Result<(), MissionError> {
        let from = self.modes.mode();
        match self.modes.request(&TransitionRequest { target, source, timestamp: t }, &self.state) {
            Ok(to) if to != from => {
                self.log.append(t, MissionEvent::ModeTransition { from, to, source, cause: None })?;
                self.on_mode_change(t, from, to)?;
            }
            Ok(_) => {}
            Err(reason) => self.log.append(t, MissionEvent::Rejection { current: from, target, reason })?,
        }
        Ok(())
    }

    fn on_mode_change(&mut self, t: f64, from: OperationMode, to: OperationMode) -> Result<(), MissionError> {
        self.log_halt_phase(t)?;
        if to.automation_drives() && !from.automation_drives() {
            self.ctrl.reset();
        }
        Ok(())
    }

    fn raise_fault(&mut self, t: f64, fault: FaultEvent) -> Result<(), MissionError> {
        let from = self.modes.mode();
        let entered = self.modes.fault(&fault) == FaultOutcome::EnteredSafeHalt;
        let kind = fault.kind;
        self.fault_buffer.push(kind);
        self.faults.push(fault.clone());
        self.log.append(t, MissionEvent::Fault { fault, entered_safe_halt: entered })?;
        if entered {
            self.log.append(
                t,
                MissionEvent::ModeTransition { from, to: OperationMode::SafeHalt, source: RequestSource::System, cause: Some(kind) },
            )?;
            self.on_mode_change(t, from, OperationMode::SafeHalt)?;
        }
        Ok(())
    }

    fn log_halt_phase(&mut self, t: f64) -> Result<(), MissionError> {
        let phase = self.modes.halt_phase();
        if phase != self.logged_phase {
            self.logged_phase = phase;
            if let Some(phase) = phase {
                self.log.append(t, MissionEvent::SafeHaltPhase { phase })?;
            }
        }
        Ok(())
    }

    fn gun_line_frame(&mut self, pose: &Pose2D, gun_lateral: f64) -> f64 {
        let (gx, gy) = self.setup.params.gun_mount;
        let p = pose.transform_point(Vec2::new(gx, gy + gun_lateral));
        let f = project_tracked(&self.setup.line, p, pose.heading, &mut self.line_hint);
        f.s
    }

    fn perceive(&mut self, now_ms: u64, t: f64) -> Result<(), MissionError> {
        let rates = self.sc.perception;
        let out = self.sc.faults.sensor_dropouts.iter().any(|d| t >= d.start_t && t < d.end_t);
        let width_due = due(now_ms, rates.width_hz);
        if out {
            let since = *self.dropout.since.get_or_insert(t);
            if width_due {
                self.log.append(t, MissionEvent::SensorGap { camera: CameraId::Down, distance: self.odometry })?;
            }
            if t - since > SENSOR_STALE_AFTER_S && !self.dropout.stale_raised {
                self.dropout.stale_raised = true;
                self.raise_fault(
                    t,
                    FaultEvent { kind: FaultKind::SensorStale, detail: format!("cameras silent for {:.2} s", t - since), timestamp: t },
                )?;
            }
            return Ok(());
        }
        self.dropout = DropoutState::default();
        let blur = RenderOptions { blur_length_m: self.state.speed * rates.exposure_s, gain: None };
        let want_down = width_due || (self.opts.keep_rasters && due(now_ms, rates.thumbnail_hz));
        let mut down = None;
        if want_down {
            let pose = self.down_spec.pose_for(&self.state.pose);
            down = Some(render_ground(&self.scene, &pose, &self.down_spec, t, &blur));
        }
        if width_due {
            let raster = down.as_ref().expect("rendered");
            let sample = estimate_line_width(raster, self.frame_index);
            self.frame_index += 1;
            let painted = self.painted_under(raster.origin_pose);
            self.log.append(t, MissionEvent::WidthSample { sample, painted })?;
            self.width_log.push((sample, self.odometry));
            self.last_width = Some(sample);
        }
        if due(now_ms, rates.velocity_hz) && now_ms > 0 {
            let prev_pose = self.down_spec.pose_for(&self.prev_pose);
            let prev = render_ground(&self.scene, &prev_pose, &self.down_spec, t - PLANT_DT, &blur);
            let curr = match &down {
                Some(r) => r.clone(),
                None => render_ground(&self.scene, &self.down_spec.pose_for(&self.state.pose), &self.down_spec, t, &blur),
            };
            let estimate = lk_velocity(&prev, &curr, PLANT_DT, &FlowParams::default());
            self.log.append(t, MissionEvent::VelocityEstimate { estimate, true_speed: self.state.speed })?;
            self.last_velocity = Some(estimate);
        }
        let need_fwd = self.sc.mission.gun_compensation == GunCompensation::Vision && due(now_ms, rates.detect_hz);
        let thumb_fwd = self.opts.keep_rasters && due(now_ms, rates.thumbnail_hz);
        if need_fwd || thumb_fwd {
            let pose = self.fwd_spec.pose_for(&self.state.pose);
            let raster = render_ground(&self.scene, &pose, &self.fwd_spec, t, &blur);
            if need_fwd {
                let det = self.detector.detect(&raster);
                self.pending_offset = gun_offset_from_detection(&det, &self.fwd_spec, &self.calib);
            }
            if thumb_fwd {
                self.fwd_raster = Some(raster);
            }
        }
        if self.opts.keep_rasters && down.is_some() {
            self.down_raster = down;
        }
        Ok(())
    }

    /// Whether fresh paint lies under the down camera: points a little ahead
    /// of and behind the camera centre must both fall on a paint segment.
    fn painted_under(&self, camera: Pose2D) -> bool {
        let dir = Vec2::from_angle(camera.heading);
        let c = camera.position();
        [c + dir * PAINTED_PROBE_M, c - dir * PAINTED_PROBE_M].iter().all(|&p| {
            self.paint.near(p, PAINTED_RADIUS_M).iter().any(|seg| {
                let d = seg.end - seg.start;
                let len2 = d.dot(d);
                if len2 <= 0.0 {
                    return false;
                }
                let u = (p - seg.start).dot(d) / len2;
                (0.0..=1.0).contains(&u) && d.cross(p - seg.start).abs() / len2.sqrt() <= PAINTED_RADIUS_M
            })
        })
    }

    fn control(&mut self, t: f64, t_ctrl: f64) -> Result<(), MissionError> {
        let mode = self.modes.mode();
        let params = self.setup.params;
        let pose = self.state.pose;
        let s_gun = self.gun_line_frame(&pose, self.state.gun_lateral);

        // gun offset estimate for this period
        let estimate = match self.sc.mission.gun_compensation {
            GunCompensation::Off => None,
            GunCompensation::Vision => self.pending_offset.take(),
            GunCompensation::GroundTruth => {
                let (gx, gy) = params.gun_mount;
                let p = pose.transform_point(Vec2::new(gx, gy));
                Some(project_tracked(&self.setup.truth_line, p, pose.heading, &mut self.truth_hint).cross_track)
            }
        };
        let gun = self.comp.update(t, estimate);

        if mode == OperationMode::SafeHalt {
            return Ok(());
        }
        let mut input = ControlInput::hold(&self.state);
        let op = self.op_cmd.filter(|_| self.endpoint.session().is_some_and(|s| !s.is_lost()));

        let frame;
        if mode.automation_drives() {
            let (delta, f) = self.ctrl.steer(&pose, self.state.speed, &self.setup.tracked, &params);
            frame = f;
            input.steer_cmd = (delta + self.sc.faults.steer_bias).clamp(-params.max_steer, params.max_steer);
            let target = self.setup.speed_profile(s_gun, self.sc.mission.speed, PROFILE_DECEL);
            input.speed_cmd = self.state.speed + speed_control(target, self.state.speed, &self.limits) * t_ctrl;
            if let Some(ev) = self.deviation.check(frame.cross_track, t) {
                self.raise_fault(t, ev)?;
                return Ok(());
            }
        } else {
            frame = self.ctrl.frame(&pose, &self.setup.tracked);
            if mode.operator_drives() {
                if let Some(c) = op {
                    input.steer_cmd = c.steer_cmd;
                    input.speed_cmd = c.speed_cmd;
                }
            }
        }

        if mode.automation_applies() {
            if self.sc.mission.gun_compensation != GunCompensation::Off {
                input.gun_lateral_cmd = gun.command;
            } else {
                input.gun_lateral_cmd = 0.0;
            }
            input.gun_height_cmd = self.setup.nominal_height;
            input.trigger_cmd = spray_permission(mode, SprayActor::Automation)
                && self.state.speed >= STANDSTILL_SPEED
                && s_gun < self.setup.s_stop
                && self.setup.in_paint_interval(s_gun);
        } else if let Some(c) = op {
            input.gun_lateral_cmd = c.gun_lateral_cmd;
            input.gun_height_cmd = c.gun_height_cmd;
            input.trigger_cmd = spray_permission(mode, SprayActor::Operator) && c.trigger_cmd;
        }
        self.input = input;

        if self.state.speed >= STANDSTILL_SPEED {
            self.tracking.push(TrackingSample { t, distance: self.odometry, frame, steer: self.state.steer, speed: self.state.speed });
        }
        Ok(())
    }

    fn on_paint(&mut self, t: f64, seg: PaintSegment) -> Result<(), MissionError> {
        self.scene.add_paint(&seg);
        self.paint.push(seg);
        self.log.append(t, MissionEvent::PaintSegment(seg))?;
        Ok(())
    }

    fn telemetry(&mut self, now_ms: u64) -> TelemetryFrame {
        let seq = self.tel_seq;
        self.tel_seq = self.tel_seq.wrapping_add(1);
        TelemetryFrame {
            seq,
            sent_at: now_ms,
            pose: self.state.pose,
            speed: self.state.speed,
            steer: self.state.steer,
            mode: self.modes.mode(),
            safe_halt_phase: self.modes.halt_phase(),
            paint_volume: self.state.paint_volume,
            gun_lateral: self.state.gun_lateral,
            gun_height: self.state.gun_height,
            gun_trigger: self.state.gun_trigger,
            width: self.last_width.take(),
            velocity: self.last_velocity.take(),
            faults: std::mem::take(&mut self.fault_buffer),
            link: self.endpoint.session().map_or(crate::net::LinkPhase::Connecting, |s| s.phase),
            ack_seq: self.latest.last().unwrap_or(0),
        }
    }

    fn check_end(&mut self, t: f64) {
        let mode = self.modes.mode();
        if mode == OperationMode::SafeHalt {
            if self.opts.end_on_secured && self.modes.halt_phase() == Some(SafeHaltPhase::Secured) {
                self.end = Some(EndReason::Secured);
            }
        } else if self.state.speed < STANDSTILL_SPEED && self.odometry > 1.0 {
            let pose = self.state.pose;
            let s_gun = self.gun_line_frame(&pose, self.state.gun_lateral);
            if s_gun >= self.setup.s_stop - 0.5 {
                self.end = Some(EndReason::Completed);
            }
        }
        if self.end.is_none() && t + 1e-9 >= self.sc.duration_s {
            self.end = Some(EndReason::Timeout);
        }
    }

    /// Forces the end of the mission (serve shutdown).
    pub fn stop(&mut self, reason: EndReason) {
        self.end.get_or_insert(reason);
    }

    /// Writes mark/gap measurements and the closing record.
    pub fn finish(mut self) -> Result<MissionOutcome, MissionError> {
        let end = self.end.unwrap_or(EndReason::Timeout);
        let t = self.now_ms.map_or(0.0, |n| n as f64 / 1000.0);
        let (samples, odo): (Vec<WidthSample>, Vec<f64>) = {
            let mut prev = 0.0;
            self.width_log
                .iter()
                .map(|&(s, d)| {
                    let step = d - prev;
                    prev = d;
                    (s, step)
                })
                .unzip()
        };
        let marks = measure_marks_and_gaps(&samples, &odo, &PresenceRule::default());
        for &(mark, length) in &marks {
            self.log.append(t, MissionEvent::MarkGap { mark, length })?;
        }
        let segs = self.paint.segments();
        self.log.append(
            t,
            MissionEvent::MissionEnd(MissionEnd {
                reason: end,
                final_state: self.state,
                paint_segments: segs.len(),
                paint_area: self.paint.total_area(),
                paint_digest: paint_digest(segs),
            }),
        )?;
        self.log.flush()?;
        Ok(MissionOutcome {
            end,
            records: self.log.into_records(),
            paint: self.paint,
            tracking: self.tracking,
            final_state: self.state,
            marks,
            faults: self.faults,
        })
    }

    pub fn controller_kind(&self) -> ControllerKind {
        self.sc.controller_kind()
    }
}

/// Projection with a progress hint, falling back to a global search.
pub(crate) fn project_tracked(path: &PathPolyline, p: Vec2, heading: f64, hint: &mut Option<f64>) -> crate::geometry::PathFrame {
    let f = match *hint {
        Some(s) => path.project_near(p, heading, s, 5.0),
        None => path.project(p, heading),
    };
    *hint = Some(f.s);
    f
}
