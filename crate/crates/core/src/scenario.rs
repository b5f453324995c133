//! Versioned TOML scenario files, dotted-key overrides and the bundled set.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{ControlLaw, ControllerConfig, ControllerKind};
use crate::geometry::{build_path, PathPiece, PathPolyline, Pose2D, Vec2};
use crate::modes::{FaultKind, OperationMode};
use crate::net::Blackout;
use crate::vehicle::VehicleParams;

pub const SCENARIO_VERSION: u32 = 1;

pub const BUNDLED: &[(&str, &str)] = &[
    ("repaint_straight", include_str!("../scenarios/repaint_straight.toml")),
    ("repaint_broken", include_str!("../scenarios/repaint_broken.toml")),
    ("premarked_curve", include_str!("../scenarios/premarked_curve.toml")),
    ("gps_country_road", include_str!("../scenarios/gps_country_road.toml")),
    ("remote_repaint", include_str!("../scenarios/remote_repaint.toml")),
    ("link_blackout", include_str!("../scenarios/link_blackout.toml")),
    ("path_deviation", include_str!("../scenarios/path_deviation.toml")),
    ("s_curve_compensation", include_str!("../scenarios/s_curve_compensation.toml")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("scenario syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("scenario schema error at line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("bad override `{key}`: {message}")]
    Override { key: String, message: String },
}

impl ScenarioError {
    fn invalid(field: &str, message: impl Into<String>) -> Self {
        ScenarioError::Invalid { field: field.to_string(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Hard limit on simulated time.
    pub duration_s: f64,
    pub seeds: Seeds,
    pub road: RoadSpec,
    #[serde(default)]
    pub old_marking: Option<MarkingSpec>,
    #[serde(default)]
    pub premarking: Option<PremarkSpec>,
    #[serde(default)]
    pub gps: Option<GpsSpec>,
    pub guidance: GuidanceSpec,
    pub paint: PaintSpec,
    #[serde(default)]
    pub vehicle: VehicleParams,
    pub mission: MissionSpec,
    #[serde(default)]
    pub perception: PerceptionSpec,
    #[serde(default)]
    pub channel: ChannelSpec,
    #[serde(default)]
    pub operator: OperatorSpec,
    #[serde(default)]
    pub faults: FaultSpec,
}

/// Every random stream is seeded explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub texture: u64,
    pub damage: u64,
    pub channel: u64,
    pub gps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartPose {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub heading_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PieceSpec {
    Straight { length: f64 },
    Arc { radius: f64, angle_deg: f64 },
}

/// Road centreline from straight/arc pieces or an explicit polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSpec {
    #[serde(default)]
    pub start: Option<StartPose>,
    #[serde(default)]
    pub pieces: Vec<PieceSpec>,
    #[serde(default)]
    pub polyline: Vec<[f64; 2]>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pattern {
    Solid,
    Broken,
}

/// An existing worn marking along the road.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingSpec {
    pub pattern: Pattern,
    #[serde(default = "default_mark")]
    pub mark_m: f64,
    #[serde(default = "default_gap")]
    pub gap_m: f64,
    /// Arc length along the road where the first mark begins.
    #[serde(default)]
    pub start_s: f64,
    /// Arc length where the marking stops; the road end when absent.
    #[serde(default)]
    pub end_s: Option<f64>,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default)]
    pub damage: f64,
    /// Left of the road centreline.
    #[serde(default)]
    pub lateral_offset: f64,
}

fn default_mark() -> f64 {
    3.0
}
fn default_gap() -> f64 {
    6.0
}
fn default_width() -> f64 {
    0.12
}

/// Short dashes laid out by a surveyor ahead of the first application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PremarkSpec {
    #[serde(default = "default_premark_spacing")]
    pub spacing_m: f64,
    #[serde(default = "default_dash")]
    pub dash_m: f64,
    #[serde(default = "default_premark_width")]
    pub width: f64,
    #[serde(default)]
    pub lateral_offset: f64,
}

fn default_premark_spacing() -> f64 {
    2.0
}
fn default_dash() -> f64 {
    0.5
}
fn default_premark_width() -> f64 {
    0.05
}

/// Surveyed reference points in the local metric frame. Either listed
/// explicitly or sampled from the road with seeded noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsSpec {
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub spacing_m: Option<f64>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub lateral_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuidanceSource {
    /// The road centreline plus the marking offset, known exactly.
    Road,
    /// Old marking located by a camera survey.
    OldMarking,
    /// Pre-marking dashes located by a camera survey.
    Premarking,
    /// Path fitted to the GPS reference points.
    Gps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSpec {
    pub source: GuidanceSource,
    /// Left of the road centreline, used by `road` guidance.
    #[serde(default)]
    pub lateral_offset: f64,
    #[serde(default = "default_survey_step")]
    pub survey_step_m: f64,
    #[serde(default = "default_smoothing")]
    pub smoothing_m: f64,
}

fn default_survey_step() -> f64 {
    1.0
}
fn default_smoothing() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaintPattern {
    /// Paint wherever the old marking has a mark.
    FollowOld,
    Solid,
    Broken,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaintSpec {
    pub pattern: PaintPattern,
    #[serde(default = "default_mark")]
    pub mark_m: f64,
    #[serde(default = "default_gap")]
    pub gap_m: f64,
    /// Arc length along the guide line where painting begins.
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub end_s: Option<f64>,
    #[serde(default = "default_width")]
    pub nominal_width: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_pass_threshold")]
    pub pass_threshold: f64,
    #[serde(default = "default_paint_volume")]
    pub paint_volume_l: f64,
}

fn default_tolerance() -> f64 {
    0.01
}
fn default_pass_threshold() -> f64 {
    0.95
}
fn default_paint_volume() -> f64 {
    500.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GunCompensation {
    Off,
    /// Offset estimated from the forward camera.
    Vision,
    /// Offset taken from the true nozzle position.
    GroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissionSpec {
    #[serde(default = "default_initial_mode")]
    pub initial_mode: OperationMode,
    /// Operating speed.
    pub speed: f64,
    /// The mission completes this far before the end of the guide line.
    #[serde(default = "default_end_margin")]
    pub end_margin_m: f64,
    #[serde(default = "default_controller")]
    pub controller: ControllerConfig,
    #[serde(default = "default_gun_compensation")]
    pub gun_compensation: GunCompensation,
    #[serde(default = "default_deviation_bound")]
    pub deviation_bound: f64,
    #[serde(default = "default_link_timeout")]
    pub link_timeout_ms: u64,
    /// Start pose relative to the tracked path start: (forward, left, heading).
    #[serde(default)]
    pub start_offset: [f64; 3],
}

fn default_initial_mode() -> OperationMode {
    OperationMode::RemoteDriving
}
fn default_end_margin() -> f64 {
    2.0
}
fn default_controller() -> ControllerConfig {
    ControllerConfig::tuned(ControllerKind::AdaptivePurePursuit)
}
fn default_gun_compensation() -> GunCompensation {
    GunCompensation::Vision
}
fn default_deviation_bound() -> f64 {
    0.5
}
fn default_link_timeout() -> u64 {
    400
}

/// Camera processing rates in Hz; 0 disables a stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionSpec {
    pub width_hz: u32,
    pub detect_hz: u32,
    pub velocity_hz: u32,
    /// Exposure time for motion blur.
    pub exposure_s: f64,
    /// Camera thumbnails sent to the console (serve mode only).
    pub thumbnail_hz: u32,
}

impl Default for PerceptionSpec {
    fn default() -> Self {
        Self { width_hz: 20, detect_hz: 10, velocity_hz: 2, exposure_s: 0.002, thumbnail_hz: 5 }
    }
}

/// Link model, used in both directions (the downlink seed is derived).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub base_delay_ms: u64,
    pub jitter_ms: u64,
    pub loss_rate: f64,
    pub blackouts: Vec<Blackout>,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self { base_delay_ms: 0, jitter_ms: 0, loss_rate: 0.0, blackouts: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub t: f64,
    #[serde(default)]
    pub mode: Option<OperationMode>,
    #[serde(default)]
    pub estop: bool,
}

/// The scripted remote operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSpec {
    /// Whether an operator connects at all.
    pub present: bool,
    /// Lookahead of the operator's steering model.
    pub lookahead_m: f64,
    pub script: Vec<ScriptEntry>,
}

impl Default for OperatorSpec {
    fn default() -> Self {
        Self { present: true, lookahead_m: 5.0, script: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedFault {
    pub t: f64,
    pub kind: FaultKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorDropout {
    /// Simulation time window, seconds.
    pub start_t: f64,
    pub end_t: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultSpec {
    pub inject: Vec<InjectedFault>,
    pub sensor_dropouts: Vec<SensorDropout>,
    /// Constant steering bias added to automatic steering (radians).
    pub steer_bias: f64,
}

/// A scenario plus the exact TOML text it was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub resolved_toml: String,
    pub source_ref: String,
}

impl LoadedScenario {
    /// Same scenario with the tuned gains of another controller; the
    /// resolved text is regenerated so logs stay replayable.
    pub fn with_controller(&self, kind: ControllerKind) -> LoadedScenario {
        let scenario = self.scenario.clone().with_controller(kind);
        let resolved_toml = toml::to_string(&scenario).expect("scenario serializes");
        LoadedScenario { scenario, resolved_toml, source_ref: self.source_ref.clone() }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn schema_error(text: &str, e: toml::de::Error) -> ScenarioError {
    let line = e.span().map_or(0, |s| line_of(text, s.start));
    ScenarioError::Schema { line, message: e.message().to_string() }
}

/// Parses a scenario, applies `key=value` overrides (dotted keys, TOML
/// values; bare words are taken as strings) and validates it.
pub fn parse_scenario(text: &str, overrides: &[String], source_ref: &str) -> Result<LoadedScenario, ScenarioError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e: toml::de::Error| ScenarioError::Syntax {
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let (scenario, resolved) = if overrides.is_empty() {
        let sc: Scenario = toml::from_str(text).map_err(|e| schema_error(text, e))?;
        (sc, text.to_string())
    } else {
        for ov in overrides {
            apply_override(&mut table, ov)?;
        }
        let resolved = toml::to_string(&table).map_err(|e| ScenarioError::Override { key: overrides.join(" "), message: e.to_string() })?;
        let sc: Scenario = toml::from_str(&resolved).map_err(|e| schema_error(&resolved, e))?;
        (sc, resolved)
    };
    scenario.validate()?;
    Ok(LoadedScenario { scenario, resolved_toml: resolved, source_ref: source_ref.to_string() })
}

/// Loads a scenario from a file path or a bundled scenario name.
pub fn load_scenario(reference: &str, overrides: &[String]) -> Result<LoadedScenario, ScenarioError> {
    let path = Path::new(reference);
    if path.exists() {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: reference.to_string(), source })?;
        return parse_scenario(&text, overrides, reference);
    }
    match bundled(reference) {
        Some(text) => parse_scenario(text, overrides, reference),
        None => Err(ScenarioError::Io {
            path: reference.to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or bundled scenario"),
        }),
    }
}

fn apply_override(table: &mut toml::Table, ov: &str) -> Result<(), ScenarioError> {
    let (key, raw) = ov.split_once('=').ok_or_else(|| ScenarioError::Override { key: ov.to_string(), message: "expected key=value".into() })?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ScenarioError::Override { key: key.to_string(), message: "empty key segment".into() });
    }
    let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.trim().to_string()),
    };
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| ScenarioError::Override { key: key.to_string(), message: format!("`{p}` is not a table") })?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.version != SCENARIO_VERSION {
            return Err(ScenarioError::invalid("version", format!("unsupported version {}, expected {SCENARIO_VERSION}", self.version)));
        }
        if !(self.duration_s > 0.0) {
            return Err(ScenarioError::invalid("duration_s", "must be positive"));
        }
        self.vehicle.validate().map_err(|e| ScenarioError::invalid("vehicle", e.to_string()))?;
        if !(self.mission.speed > 0.0 && self.mission.speed <= self.vehicle.max_speed) {
            return Err(ScenarioError::invalid("mission.speed", format!("must be in (0, {}]", self.vehicle.max_speed)));
        }
        self.mission.controller.validate().map_err(|e| ScenarioError::invalid("mission.controller", e.to_string()))?;
        if self.mission.initial_mode == OperationMode::SafeHalt {
            return Err(ScenarioError::invalid("mission.initial_mode", "cannot start in safe_halt"));
        }
        if !(self.road.spacing > 0.0) {
            return Err(ScenarioError::invalid("road.spacing", "must be positive"));
        }
        if self.road.pieces.is_empty() == self.road.polyline.is_empty() {
            return Err(ScenarioError::invalid("road", "give exactly one of `pieces` or `polyline`"));
        }
        if !self.road.pieces.is_empty() && self.road.start.is_none() {
            return Err(ScenarioError::invalid("road.start", "required with `pieces`"));
        }
        let needs = match self.guidance.source {
            GuidanceSource::Road => None,
            GuidanceSource::OldMarking => self.old_marking.is_none().then_some("old_marking"),
            GuidanceSource::Premarking => self.premarking.is_none().then_some("premarking"),
            GuidanceSource::Gps => self.gps.is_none().then_some("gps"),
        };
        if let Some(section) = needs {
            return Err(ScenarioError::invalid("guidance.source", format!("needs a [{section}] section")));
        }
        if self.paint.pattern == PaintPattern::FollowOld && self.old_marking.is_none() {
            return Err(ScenarioError::invalid("paint.pattern", "follow_old needs an [old_marking] section"));
        }
        if let Some(m) = &self.old_marking {
            if !(0.0..=1.0).contains(&m.damage) {
                return Err(ScenarioError::invalid("old_marking.damage", "must be in [0, 1]"));
            }
            if !(m.width > 0.0 && m.mark_m > 0.0 && m.gap_m > 0.0) {
                return Err(ScenarioError::invalid("old_marking", "width, mark_m and gap_m must be positive"));
            }
        }
        if let Some(g) = &self.gps {
            if g.points.is_empty() == g.spacing_m.is_none() {
                return Err(ScenarioError::invalid("gps", "give exactly one of `points` or `spacing_m`"));
            }
        }
        let (wmin, wmax) = self.vehicle.width_model().width_range();
        if !(wmin..=wmax).contains(&self.paint.nominal_width) {
            return Err(ScenarioError::invalid("paint.nominal_width", format!("outside achievable [{wmin}, {wmax}]")));
        }
        if !(self.paint.tolerance >= 0.0) || !(0.0..=1.0).contains(&self.paint.pass_threshold) {
            return Err(ScenarioError::invalid("paint", "tolerance must be >= 0 and pass_threshold in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.channel.loss_rate) {
            return Err(ScenarioError::invalid("channel.loss_rate", "must be in [0, 1)"));
        }
        if self.operator.script.windows(2).any(|w| w[1].t < w[0].t) {
            return Err(ScenarioError::invalid("operator.script", "entries must be in time order"));
        }
        Ok(())
    }

    pub fn road_path(&self) -> Result<PathPolyline, ScenarioError> {
        let bad = |e: crate::geometry::GeometryError| ScenarioError::invalid("road", e.to_string());
        if !self.road.polyline.is_empty() {
            let pts: Vec<Vec2> = self.road.polyline.iter().map(|p| Vec2::new(p[0], p[1])).collect();
            return PathPolyline::new(pts).map(|p| p.resample(self.road.spacing)).map_err(bad);
        }
        let s = self.road.start.expect("validated");
        let pieces: Vec<PathPiece> = self
            .road
            .pieces
            .iter()
            .map(|p| match *p {
                PieceSpec::Straight { length } => PathPiece::Straight { length },
                PieceSpec::Arc { radius, angle_deg } => PathPiece::Arc { radius, angle_deg },
            })
            .collect();
        build_path(Pose2D::new(s.x, s.y, s.heading_deg.to_radians()), &pieces, self.road.spacing).map_err(bad)
    }

    pub fn controller_kind(&self) -> ControllerKind {
        self.mission.controller.law.kind()
    }

    /// Replaces the controller with the tuned one of `kind`.
    pub fn with_controller(mut self, kind: ControllerKind) -> Self {
        self.mission.controller = ControllerConfig { rate_hz: self.mission.controller.rate_hz, law: ControlLaw::tuned(kind) };
        self
    }
}

/// Arc-length intervals of a periodic mark/gap pattern within `[start, end)`.
pub fn pattern_intervals(pattern: Pattern, mark: f64, gap: f64, start: f64, end: f64) -> Vec<(f64, f64)> {
    if end <= start {
        return Vec::new();
    }
    match pattern {
        Pattern::Solid => vec![(start, end)],
        Pattern::Broken => {
            let mut out = Vec::new();
            let mut s = start;
            while s < end {
                out.push((s, (s + mark).min(end)));
                s += mark + gap;
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_parse() {
        assert!(BUNDLED.len() >= 6);
        for (name, text) in BUNDLED {
            let sc = parse_scenario(text, &[], name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(&sc.scenario.name, name);
            sc.scenario.road_path().unwrap();
        }
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let text = bundled("repaint_straight").unwrap().replace("[paint]", "[paint]\ncolour = \"white\"");
        let err = parse_scenario(&text, &[], "x").unwrap_err();
        match err {
            ScenarioError::Schema { line, message } => {
                assert!(message.contains("colour"), "{message}");
                let expect = text.lines().position(|l| l.starts_with("colour")).unwrap() + 1;
                assert_eq!(line, expect);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_seed_is_rejected() {
        let text = bundled("repaint_straight").unwrap().replace("gps = ", "# gps = ");
        assert!(matches!(parse_scenario(&text, &[], "x"), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn overrides() {
        let text = bundled("repaint_straight").unwrap();
        let sc = parse_scenario(text, &["mission.speed=2.5".into(), "channel.base_delay_ms=100".into(), "mission.initial_mode=remote_monitoring".into()], "x").unwrap();
        assert_eq!(sc.scenario.mission.speed, 2.5);
        assert_eq!(sc.scenario.channel.base_delay_ms, 100);
        assert_eq!(sc.scenario.mission.initial_mode, OperationMode::RemoteMonitoring);
        let again = parse_scenario(&sc.resolved_toml, &[], "x").unwrap();
        assert_eq!(again.scenario, sc.scenario);
        assert!(matches!(parse_scenario(text, &["mission.speed=9.0".into()], "x"), Err(ScenarioError::Invalid { .. })));
        assert!(matches!(parse_scenario(text, &["nonsense".into()], "x"), Err(ScenarioError::Override { .. })));
        assert!(matches!(parse_scenario(text, &["mission.speedy=1".into()], "x"), Err(ScenarioError::Schema { .. })));
    }

    #[test]
    fn version_checked() {
        let text = bundled("repaint_straight").unwrap().replace("version = 1", "version = 2");
        assert!(matches!(parse_scenario(&text, &[], "x"), Err(ScenarioError::Invalid { field, .. }) if field == "version"));
    }

    #[test]
    fn broken_intervals() {
        let iv = pattern_intervals(Pattern::Broken, 3.0, 6.0, 2.0, 30.0);
        assert_eq!(iv, vec![(2.0, 5.0), (11.0, 14.0), (20.0, 23.0), (29.0, 30.0)]);
        assert_eq!(pattern_intervals(Pattern::Solid, 3.0, 6.0, 0.0, 10.0), vec![(0.0, 10.0)]);
    }

    #[test]
    fn controller_swap_round_trips() {
        let base = parse_scenario(bundled("premarked_curve").unwrap(), &[], "premarked_curve").unwrap();
        for kind in ControllerKind::ALL {
            let swapped = base.with_controller(kind);
            assert_eq!(swapped.scenario.mission.controller.law.kind(), kind);
            let again = parse_scenario(&swapped.resolved_toml, &[], "x").unwrap();
            assert_eq!(again.scenario, swapped.scenario);
        }
    }
}
