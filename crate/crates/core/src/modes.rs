//! Operation modes and the guarded transitions between them, including the
//! Safe Halt fallback procedure.
//!
//! The transition graph is a ladder: `Manual - RemoteDriving - {RA drive, RA
//! apply} - RemoteMonitoring`, with an edge from every mode into `SafeHalt`
//! and a single exit from a secured Safe Halt back to `RemoteDriving`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::vehicle::{ControlInput, VehicleParams, VehicleState, STANDSTILL_SPEED};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperationMode {
    /// On-board driver.
    Manual,
    /// Operator drives and sprays.
    RemoteDriving,
    /// Vehicle drives, operator sprays.
    RemoteAssistanceDrive,
    /// Operator drives, vehicle sprays.
    RemoteAssistanceApply,
    /// Vehicle drives and sprays; operator supervises.
    RemoteMonitoring,
    SafeHalt,
}

impl OperationMode {
    pub const ALL: [OperationMode; 6] = [
        OperationMode::Manual,
        OperationMode::RemoteDriving,
        OperationMode::RemoteAssistanceDrive,
        OperationMode::RemoteAssistanceApply,
        OperationMode::RemoteMonitoring,
        OperationMode::SafeHalt,
    ];

    pub fn code(self) -> u8 {
        match self {
            OperationMode::Manual => 0,
            OperationMode::RemoteDriving => 1,
            OperationMode::RemoteAssistanceDrive => 2,
            OperationMode::RemoteAssistanceApply => 3,
            OperationMode::RemoteMonitoring => 4,
            OperationMode::SafeHalt => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    fn rung(self) -> Option<u8> {
        match self {
            OperationMode::Manual => Some(0),
            OperationMode::RemoteDriving => Some(1),
            OperationMode::RemoteAssistanceDrive | OperationMode::RemoteAssistanceApply => Some(2),
            OperationMode::RemoteMonitoring => Some(3),
            OperationMode::SafeHalt => None,
        }
    }

    /// Whether the vehicle's own controllers steer in this mode.
    pub fn automation_drives(self) -> bool {
        matches!(
            self,
            OperationMode::RemoteAssistanceDrive | OperationMode::RemoteMonitoring
        )
    }

    /// Whether the remote operator's driving commands are applied.
    pub fn operator_drives(self) -> bool {
        matches!(
            self,
            OperationMode::RemoteDriving | OperationMode::RemoteAssistanceApply
        )
    }

    /// Whether the application system (gun position, height, trigger) is
    /// under automatic control.
    pub fn automation_applies(self) -> bool {
        matches!(
            self,
            OperationMode::RemoteAssistanceApply | OperationMode::RemoteMonitoring
        )
    }
}

impl fmt::Display for OperationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            OperationMode::Manual => "manual",
            OperationMode::RemoteDriving => "remote_driving",
            OperationMode::RemoteAssistanceDrive => "remote_assistance_drive",
            OperationMode::RemoteAssistanceApply => "remote_assistance_apply",
            OperationMode::RemoteMonitoring => "remote_monitoring",
            OperationMode::SafeHalt => "safe_halt",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestSource {
    Operator,
    System,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionRequest {
    pub target: OperationMode,
    pub source: RequestSource,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    LinkTimeout,
    PathDeviation,
    SensorStale,
    PaintFault,
    Estop,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::LinkTimeout,
        FaultKind::PathDeviation,
        FaultKind::SensorStale,
        FaultKind::PaintFault,
        FaultKind::Estop,
    ];

    pub fn code(self) -> u8 {
        match self {
            FaultKind::LinkTimeout => 0,
            FaultKind::PathDeviation => 1,
            FaultKind::SensorStale => 2,
            FaultKind::PaintFault => 3,
            FaultKind::Estop => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub kind: FaultKind,
    pub detail: String,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafeHaltPhase {
    Decelerating,
    Stopped,
    Flushing,
    Secured,
}

impl SafeHaltPhase {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SafeHaltPhase::Decelerating),
            1 => Some(SafeHaltPhase::Stopped),
            2 => Some(SafeHaltPhase::Flushing),
            3 => Some(SafeHaltPhase::Secured),
            _ => None,
        }
    }
}

pub const COMFORT_DECEL: f64 = 1.5;
pub const DEFAULT_FLUSH_DURATION: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeHaltProcedure {
    pub phase: SafeHaltPhase,
    pub decel_rate: f64,
    pub flush_elapsed: f64,
    pub flush_duration: f64,
}

impl SafeHaltProcedure {
    pub fn start(params: &VehicleParams) -> Self {
        Self {
            phase: SafeHaltPhase::Decelerating,
            decel_rate: COMFORT_DECEL.min(params.max_decel),
            flush_elapsed: 0.0,
            flush_duration: DEFAULT_FLUSH_DURATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NotAtStandstill,
    ExitNotSecured,
    IllegalEdge,
    /// System-sourced requests may only target Safe Halt.
    SystemSourceRestricted,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::NotAtStandstill => "not_at_standstill",
            RejectReason::ExitNotSecured => "exit_not_secured",
            RejectReason::IllegalEdge => "illegal_edge",
            RejectReason::SystemSourceRestricted => "system_source_restricted",
        };
        f.write_str(s)
    }
}

/// Checks a transition request against the ladder graph.
///
/// `halt_phase` must be the current Safe Halt phase when `current` is
/// `SafeHalt`. Returns the resulting mode.
pub fn request_transition(
    current: OperationMode,
    halt_phase: Option<SafeHaltPhase>,
    request: &TransitionRequest,
    vehicle: &VehicleState,
) -> Result<OperationMode, RejectReason> {
    use OperationMode::*;
    let target = request.target;
    if target == SafeHalt {
        return Ok(SafeHalt);
    }
    if request.source == RequestSource::System {
        return Err(RejectReason::SystemSourceRestricted);
    }
    if current == target {
        return Ok(current);
    }
    if current == SafeHalt {
        if halt_phase != Some(SafeHaltPhase::Secured) {
            return Err(RejectReason::ExitNotSecured);
        }
        return if target == RemoteDriving {
            Ok(RemoteDriving)
        } else {
            Err(RejectReason::IllegalEdge)
        };
    }
    let (from, to) = (current.rung().unwrap(), target.rung().unwrap());
    if from.abs_diff(to) != 1 {
        return Err(RejectReason::IllegalEdge);
    }
    if (current == Manual || target == Manual) && vehicle.speed >= STANDSTILL_SPEED {
        return Err(RejectReason::NotAtStandstill);
    }
    Ok(target)
}

/// Enters Safe Halt after a fault. Returns `None` when already halted (the
/// fault is only logged by the caller).
pub fn on_fault(
    current: OperationMode,
    _fault: &FaultEvent,
    params: &VehicleParams,
) -> Option<(OperationMode, SafeHaltProcedure)> {
    if current == OperationMode::SafeHalt {
        return None;
    }
    Some((OperationMode::SafeHalt, SafeHaltProcedure::start(params)))
}

/// Advances the Safe Halt procedure by one step and produces the actuation
/// request for that step. The spray trigger is always off.
pub fn safe_halt_tick(
    procedure: &SafeHaltProcedure,
    vehicle: &VehicleState,
    dt: f64,
) -> (SafeHaltProcedure, ControlInput) {
    let mut next = *procedure;
    let mut input = ControlInput::hold(vehicle);
    match procedure.phase {
        SafeHaltPhase::Decelerating => {
            if vehicle.speed < STANDSTILL_SPEED {
                next.phase = SafeHaltPhase::Stopped;
                input.speed_cmd = 0.0;
            } else {
                input.speed_cmd = (vehicle.speed - procedure.decel_rate * dt).max(0.0);
            }
        }
        SafeHaltPhase::Stopped => {
            next.phase = SafeHaltPhase::Flushing;
            next.flush_elapsed = 0.0;
        }
        SafeHaltPhase::Flushing => {
            next.flush_elapsed += dt;
            if next.flush_elapsed >= procedure.flush_duration - 1e-9 {
                next.phase = SafeHaltPhase::Secured;
            }
        }
        SafeHaltPhase::Secured => {}
    }
    input.trigger_cmd = false;
    (next, input)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SprayActor {
    Operator,
    Automation,
}

/// Who may operate the spray trigger in `mode`.
pub fn spray_permission(mode: OperationMode, actor: SprayActor) -> bool {
    use OperationMode::*;
    match mode {
        Manual | RemoteDriving | RemoteAssistanceDrive => actor == SprayActor::Operator,
        RemoteAssistanceApply | RemoteMonitoring => actor == SprayActor::Automation,
        SafeHalt => false,
    }
}

/// Owned mode state: the current mode plus the Safe Halt procedure while
/// halted.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeMachine {
    mode: OperationMode,
    halt: Option<SafeHaltProcedure>,
    params: VehicleParams,
}

/// Result of feeding a fault to the [`ModeMachine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultOutcome {
    EnteredSafeHalt,
    LoggedOnly,
}

impl ModeMachine {
    pub fn new(initial: OperationMode, params: VehicleParams) -> Self {
        let halt = (initial == OperationMode::SafeHalt).then(|| SafeHaltProcedure::start(&params));
        Self {
            mode: initial,
            halt,
            params,
        }
    }

    pub fn mode(&self) -> OperationMode {
        self.mode
    }

    pub fn halt(&self) -> Option<&SafeHaltProcedure> {
        self.halt.as_ref()
    }

    pub fn halt_phase(&self) -> Option<SafeHaltPhase> {
        self.halt.map(|h| h.phase)
    }

    pub fn request(
        &mut self,
        request: &TransitionRequest,
        vehicle: &VehicleState,
    ) -> Result<OperationMode, RejectReason> {
        let next = request_transition(self.mode, self.halt_phase(), request, vehicle)?;
        if next == OperationMode::SafeHalt {
            if self.mode != OperationMode::SafeHalt {
                self.halt = Some(SafeHaltProcedure::start(&self.params));
            }
        } else {
            self.halt = None;
        }
        self.mode = next;
        Ok(next)
    }

    pub fn fault(&mut self, fault: &FaultEvent) -> FaultOutcome {
        match on_fault(self.mode, fault, &self.params) {
            Some((mode, proc_)) => {
                self.mode = mode;
                self.halt = Some(proc_);
                FaultOutcome::EnteredSafeHalt
            }
            None => FaultOutcome::LoggedOnly,
        }
    }

    /// Advances Safe Halt; `None` outside Safe Halt.
    pub fn tick_halt(&mut self, vehicle: &VehicleState, dt: f64) -> Option<ControlInput> {
        let proc_ = self.halt.as_mut()?;
        let (next, input) = safe_halt_tick(proc_, vehicle, dt);
        *proc_ = next;
        Some(input)
    }
}

/// Raises `path_deviation` when the tracked cross-track error leaves its bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationMonitor {
    pub bound: f64,
}

impl Default for DeviationMonitor {
    fn default() -> Self {
        Self { bound: 0.5 }
    }
}

impl DeviationMonitor {
    pub fn check(&self, cross_track: f64, timestamp: f64) -> Option<FaultEvent> {
        (cross_track.abs() > self.bound).then(|| FaultEvent {
            kind: FaultKind::PathDeviation,
            detail: format!("cross_track {cross_track:.3} m exceeds bound {:.3} m", self.bound),
            timestamp,
        })
    }
}
