//! Lateral path-tracking laws, longitudinal speed control and the spray-gun
//! lateral compensator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PathFrame, PathPolyline, Pose2D, Vec2};
use crate::vehicle::{self, ControlInput, SimError, VehicleParams, VehicleState, PLANT_DT};

#[derive(Debug, Error, PartialEq)]
pub enum ControlError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error("vehicle diverged: cross-track {cross_track:.3} m at s = {s:.2} m")]
    Diverged { s: f64, cross_track: f64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Cross-track beyond which a tracking run is aborted.
pub const DIVERGENCE_LIMIT: f64 = 5.0;
/// Band used for settle distance.
pub const SETTLE_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Pid,
    Stanley,
    PurePursuit,
    AdaptivePurePursuit,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 4] = [
        ControllerKind::Pid,
        ControllerKind::Stanley,
        ControllerKind::PurePursuit,
        ControllerKind::AdaptivePurePursuit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Pid => "pid",
            ControllerKind::Stanley => "stanley",
            ControllerKind::PurePursuit => "pure_pursuit",
            ControllerKind::AdaptivePurePursuit => "adaptive_pure_pursuit",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlLaw {
    Pid {
        kp: f64,
        ki: f64,
        kd: f64,
        /// Anti-windup clamp on the error integral (m·s).
        #[serde(default = "default_integral_limit")]
        integral_limit: f64,
    },
    Stanley {
        k_e: f64,
        k_soft: f64,
    },
    PurePursuit {
        lookahead_m: f64,
    },
    AdaptivePurePursuit {
        k_v: f64,
        ld_min: f64,
        ld_max: f64,
    },
}

fn default_integral_limit() -> f64 {
    1.0
}

fn default_rate_hz() -> f64 {
    50.0
}

impl ControlLaw {
    pub fn kind(&self) -> ControllerKind {
        match self {
            ControlLaw::Pid { .. } => ControllerKind::Pid,
            ControlLaw::Stanley { .. } => ControllerKind::Stanley,
            ControlLaw::PurePursuit { .. } => ControllerKind::PurePursuit,
            ControlLaw::AdaptivePurePursuit { .. } => ControllerKind::AdaptivePurePursuit,
        }
    }

    /// Tuned defaults for the reference machine.
    pub fn tuned(kind: ControllerKind) -> Self {
        match kind {
            ControllerKind::Pid => ControlLaw::Pid {
                kp: 1.0 / 3.0,
                ki: 0.02,
                kd: 0.6,
                integral_limit: default_integral_limit(),
            },
            ControllerKind::Stanley => ControlLaw::Stanley { k_e: 1.0, k_soft: 1.0 },
            ControllerKind::PurePursuit => ControlLaw::PurePursuit { lookahead_m: 4.0 },
            ControllerKind::AdaptivePurePursuit => ControlLaw::AdaptivePurePursuit {
                k_v: 0.5,
                ld_min: 2.0,
                ld_max: 8.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_rate_hz")]
    pub rate_hz: f64,
    pub law: ControlLaw,
}

impl ControllerConfig {
    pub fn tuned(kind: ControllerKind) -> Self {
        Self {
            rate_hz: default_rate_hz(),
            law: ControlLaw::tuned(kind),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |m: &str| Err(ControlError::Config(m.to_string()));
        let pos = |x: f64| x.is_finite() && x > 0.0;
        if !pos(self.rate_hz) || self.rate_hz > 1.0 / PLANT_DT {
            return bad("rate_hz must be in (0, 100]");
        }
        match self.law {
            ControlLaw::Pid { kp, ki, kd, integral_limit } => {
                if ![kp, ki, kd, integral_limit].into_iter().all(pos) {
                    return bad("PID gains must be positive");
                }
            }
            ControlLaw::Stanley { k_e, k_soft } => {
                if !pos(k_e) || !pos(k_soft) {
                    return bad("Stanley gains must be positive");
                }
            }
            ControlLaw::PurePursuit { lookahead_m } => {
                if !pos(lookahead_m) {
                    return bad("lookahead must be positive");
                }
            }
            ControlLaw::AdaptivePurePursuit { k_v, ld_min, ld_max } => {
                if !pos(k_v) || !pos(ld_min) || !pos(ld_max) {
                    return bad("adaptive gains must be positive");
                }
                if ld_min > ld_max {
                    return bad("ld_min must not exceed ld_max");
                }
            }
        }
        Ok(())
    }
}

/// Integrator and previous-error memory for [`pid_steer`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
}

/// PID on cross-track error. The derivative is zero on the first call.
pub fn pid_steer(frame: &PathFrame, dt: f64, gains: &PidGains, state: &mut PidState, max_steer: f64) -> f64 {
    assert!(dt > 0.0, "pid_steer requires dt > 0");
    let e = frame.cross_track;
    state.integral = (state.integral + e * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let de = state.prev_error.map_or(0.0, |p| (e - p) / dt);
    state.prev_error = Some(e);
    let delta = -(gains.kp * e + gains.ki * state.integral + gains.kd * de);
    clamp_steer(delta, max_steer)
}

/// Stanley law evaluated on a front-axle frame.
pub fn stanley_steer(frame: &PathFrame, speed: f64, k_e: f64, k_soft: f64, max_steer: f64) -> f64 {
    let speed = speed.max(0.0);
    let delta = -frame.heading_error + (k_e * -frame.cross_track / (k_soft + speed)).atan();
    clamp_steer(delta, max_steer)
}

/// Pure pursuit toward the point `lookahead` beyond the projection of the
/// rear axle.
pub fn pure_pursuit_steer(pose: &Pose2D, path: &PathPolyline, lookahead: f64, wheelbase: f64, max_steer: f64) -> f64 {
    let frame = path.project(pose.position(), pose.heading);
    pure_pursuit_from(pose, path, frame.s, lookahead, wheelbase, max_steer)
}

/// Pure pursuit with a known projection arc length.
pub fn pure_pursuit_from(
    pose: &Pose2D,
    path: &PathPolyline,
    s_proj: f64,
    lookahead: f64,
    wheelbase: f64,
    max_steer: f64,
) -> f64 {
    assert!(lookahead > 0.0, "lookahead must be positive");
    let goal = path.sample_clamped(s_proj + lookahead).0.position();
    let local = pose.inverse_transform_point(goal);
    pure_pursuit_delta(local.y.atan2(local.x), lookahead, wheelbase, max_steer)
}

/// `atan(2 L sin(alpha) / ld)`, clamped.
pub fn pure_pursuit_delta(alpha: f64, lookahead: f64, wheelbase: f64, max_steer: f64) -> f64 {
    clamp_steer((2.0 * wheelbase * alpha.sin() / lookahead).atan(), max_steer)
}

pub fn adaptive_lookahead(speed: f64, k_v: f64, ld_min: f64, ld_max: f64) -> f64 {
    (k_v * speed.max(0.0)).clamp(ld_min, ld_max)
}

fn clamp_steer(delta: f64, max_steer: f64) -> f64 {
    if delta.is_nan() {
        return 0.0;
    }
    delta.clamp(-max_steer, max_steer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedLimits {
    pub kp: f64,
    pub max_accel: f64,
    pub max_decel: f64,
}

impl SpeedLimits {
    pub fn from_params(params: &VehicleParams) -> Self {
        Self {
            kp: 1.0,
            max_accel: params.max_accel,
            max_decel: params.max_decel,
        }
    }
}

/// Proportional acceleration command.
pub fn speed_control(v_target: f64, v: f64, limits: &SpeedLimits) -> f64 {
    (limits.kp * (v_target - v)).clamp(-limits.max_decel, limits.max_accel)
}

/// Lateral controller with its own progress tracking along the path.
#[derive(Debug, Clone)]
pub struct LateralController {
    config: ControllerConfig,
    pid: PidState,
    s_hint: Option<f64>,
}

impl LateralController {
    pub fn new(config: ControllerConfig) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(Self {
            config,
            pid: PidState::default(),
            s_hint: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn period(&self) -> f64 {
        1.0 / self.config.rate_hz
    }

    pub fn reset(&mut self) {
        self.pid = PidState::default();
        self.s_hint = None;
    }

    /// Rear-axle frame, tracked incrementally.
    pub fn frame(&mut self, pose: &Pose2D, path: &PathPolyline) -> PathFrame {
        let frame = match self.s_hint {
            Some(s) => path.project_near(pose.position(), pose.heading, s, 10.0),
            None => path.project(pose.position(), pose.heading),
        };
        self.s_hint = Some(frame.s);
        frame
    }

    /// Steering command for one control period. Returns the command and the
    /// rear-axle frame it was computed from.
    pub fn steer(&mut self, pose: &Pose2D, speed: f64, path: &PathPolyline, params: &VehicleParams) -> (f64, PathFrame) {
        let frame = self.frame(pose, path);
        let max_steer = params.max_steer;
        let delta = match self.config.law {
            ControlLaw::Pid { kp, ki, kd, integral_limit } => {
                let gains = PidGains { kp, ki, kd, integral_limit };
                pid_steer(&frame, self.period(), &gains, &mut self.pid, max_steer)
            }
            ControlLaw::Stanley { k_e, k_soft } => {
                let front = pose.transform_point(Vec2::new(params.wheelbase, 0.0));
                let ff = path.project_near(front, pose.heading, frame.s + params.wheelbase, 10.0);
                stanley_steer(&ff, speed, k_e, k_soft, max_steer)
            }
            ControlLaw::PurePursuit { lookahead_m } => {
                pure_pursuit_from(pose, path, frame.s, lookahead_m, params.wheelbase, max_steer)
            }
            ControlLaw::AdaptivePurePursuit { k_v, ld_min, ld_max } => {
                let ld = adaptive_lookahead(speed, k_v, ld_min, ld_max);
                pure_pursuit_from(pose, path, frame.s, ld, params.wheelbase, max_steer)
            }
        };
        (delta, frame)
    }
}

pub const GUN_FILTER_TAU: f64 = 0.1;
pub const GUN_HOLD_AFTER: f64 = 0.2;
pub const GUN_STALE_AFTER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GunCommand {
    pub command: f64,
    /// Part of the filtered offset the actuator cannot absorb.
    pub residual: f64,
    /// The estimate is older than the hold threshold; the command is frozen.
    pub holding: bool,
    /// The estimate is older than the stale threshold.
    pub stale: bool,
}

/// Low-pass filtered lateral compensation of the nozzle offset.
#[derive(Debug, Clone, PartialEq)]
pub struct GunCompensator {
    travel_limit: f64,
    tau: f64,
    filtered: Option<f64>,
    last_estimate_at: Option<f64>,
    last_command: f64,
}

impl GunCompensator {
    pub fn new(travel_limit: f64) -> Self {
        Self {
            travel_limit,
            tau: GUN_FILTER_TAU,
            filtered: None,
            last_estimate_at: None,
            last_command: 0.0,
        }
    }

    pub fn last_command(&self) -> f64 {
        self.last_command
    }

    /// Feeds an optional fresh offset estimate at time `now`. Positive
    /// offsets mean the nozzle sits left of the line.
    pub fn update(&mut self, now: f64, estimate: Option<f64>) -> GunCommand {
        if let Some(x) = estimate.filter(|x| x.is_finite()) {
            let y = match (self.filtered, self.last_estimate_at) {
                (Some(y), Some(t0)) => {
                    let a = 1.0 - (-(now - t0).max(0.0) / self.tau).exp();
                    y + a * (x - y)
                }
                _ => x,
            };
            self.filtered = Some(y);
            self.last_estimate_at = Some(now);
            self.last_command = (-y).clamp(-self.travel_limit, self.travel_limit);
            return GunCommand {
                command: self.last_command,
                residual: (y.abs() - self.travel_limit).max(0.0),
                holding: false,
                stale: false,
            };
        }
        let age = self.last_estimate_at.map_or(f64::INFINITY, |t0| now - t0);
        GunCommand {
            command: self.last_command,
            residual: self.filtered.map_or(0.0, |y| (y.abs() - self.travel_limit).max(0.0)),
            holding: age > GUN_HOLD_AFTER,
            stale: age > GUN_STALE_AFTER,
        }
    }
}

/// Closed-loop tracking problem for [`run_tracking_benchmark`].
#[derive(Debug, Clone)]
pub struct TrackingScenario {
    pub path: PathPolyline,
    pub initial: Pose2D,
    pub initial_speed: f64,
    pub target_speed: f64,
    /// The run ends when the rear axle is this close to the path end.
    pub end_margin: f64,
    pub max_time: f64,
    /// Constant bias added to the executed steer command.
    pub steer_bias: f64,
}

impl TrackingScenario {
    pub fn new(path: PathPolyline, initial: Pose2D, speed: f64) -> Self {
        let max_time = path.length() / speed.max(0.1) * 2.0 + 10.0;
        Self {
            path,
            initial,
            initial_speed: speed,
            target_speed: speed,
            end_margin: 1.0,
            max_time,
            steer_bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub rms_cross_track: f64,
    pub max_cross_track: f64,
    pub rms_heading_error: f64,
    /// Distance travelled until the cross-track error last left the settle
    /// band. Equals the run length when the run ends outside the band.
    pub settle_distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingSample {
    pub t: f64,
    pub distance: f64,
    pub frame: PathFrame,
    pub steer: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingRun {
    pub report: TrackingReport,
    pub samples: Vec<TrackingSample>,
    pub final_state: VehicleState,
}

/// Runs the controller against the plant until the end of the path.
pub fn run_tracking(
    scenario: &TrackingScenario,
    config: &ControllerConfig,
    params: &VehicleParams,
) -> Result<TrackingRun, ControlError> {
    params.validate()?;
    let mut ctrl = LateralController::new(*config)?;
    let limits = SpeedLimits::from_params(params);
    let mut state = VehicleState::at_rest(scenario.initial, params);
    state.speed = scenario.initial_speed.clamp(0.0, params.max_speed);
    let ticks_per_control = ((1.0 / config.rate_hz) / PLANT_DT).round().max(1.0) as u64;
    let t_ctrl = ticks_per_control as f64 * PLANT_DT;
    let mut input = ControlInput::hold(&state);
    let mut samples = Vec::new();
    let mut distance = 0.0;
    let mut tick: u64 = 0;
    loop {
        if tick % ticks_per_control == 0 {
            let (delta, _) = ctrl.steer(&state.pose, state.speed, &scenario.path, params);
            let accel = speed_control(scenario.target_speed, state.speed, &limits);
            input.steer_cmd = (delta + scenario.steer_bias).clamp(-params.max_steer, params.max_steer);
            input.speed_cmd = state.speed + accel * t_ctrl;
        }
        let prev = state.pose.position();
        state = vehicle::step(&state, &input, PLANT_DT, params)?.0;
        tick += 1;
        distance += state.pose.position().distance(prev);
        let frame = ctrl.frame(&state.pose, &scenario.path);
        if frame.cross_track.abs() > DIVERGENCE_LIMIT {
            return Err(ControlError::Diverged { s: frame.s, cross_track: frame.cross_track });
        }
        samples.push(TrackingSample {
            t: state.clock,
            distance,
            frame,
            steer: state.steer,
            speed: state.speed,
        });
        if frame.s >= scenario.path.length() - scenario.end_margin || state.clock >= scenario.max_time {
            break;
        }
    }
    Ok(TrackingRun {
        report: summarize(&samples),
        samples,
        final_state: state,
    })
}

/// Convenience wrapper returning only the summary.
pub fn run_tracking_benchmark(
    scenario: &TrackingScenario,
    config: &ControllerConfig,
    params: &VehicleParams,
) -> Result<TrackingReport, ControlError> {
    run_tracking(scenario, config, params).map(|r| r.report)
}

pub fn summarize(samples: &[TrackingSample]) -> TrackingReport {
    if samples.is_empty() {
        return TrackingReport {
            rms_cross_track: 0.0,
            max_cross_track: 0.0,
            rms_heading_error: 0.0,
            settle_distance: 0.0,
        };
    }
    let n = samples.len() as f64;
    let rms = |f: &dyn Fn(&TrackingSample) -> f64| (samples.iter().map(|s| f(s).powi(2)).sum::<f64>() / n).sqrt();
    let max = samples.iter().map(|s| s.frame.cross_track.abs()).fold(0.0, f64::max);
    let settle = samples
        .iter()
        .rposition(|s| s.frame.cross_track.abs() > SETTLE_BAND)
        .map_or(0.0, |i| samples[i].distance);
    TrackingReport {
        rms_cross_track: rms(&|s| s.frame.cross_track),
        max_cross_track: max,
        rms_heading_error: rms(&|s| s.frame.heading_error),
        settle_distance: settle,
    }
}
