//! Deterministic simulator and teleoperation stack for a driverless
//! road-marking machine.

pub mod control;
pub mod geometry;
pub mod mission;
pub mod modes;
pub mod net;
pub mod perception;
pub mod qa;
pub mod scenario;
pub mod vehicle;

pub use geometry::{Pose2D, PathFrame, PathPolyline, Vec2};
pub use control::{ControllerKind, TrackingReport};
pub use mission::{replay, run_headless, MissionError, RunReport};
pub use modes::{FaultKind, OperationMode, SafeHaltPhase};
pub use qa::{EndReason, LogRecord, MissionEvent};
pub use scenario::{load_scenario, LoadedScenario, Scenario, ScenarioError};
pub use vehicle::{VehicleParams, VehicleState};
