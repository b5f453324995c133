//! Fixtures shared by the benchmarks.

use std::sync::Arc;

use roadmark::geometry::{PathPolyline, Pose2D, Vec2};
use roadmark::modes::OperationMode;
use roadmark::net::{LinkPhase, TelemetryFrame};
use roadmark::perception::{render_ground, CameraSpec, GroundRaster, RenderOptions, Scene, TextureTile};
use roadmark::scenario::{load_scenario, LoadedScenario};
use roadmark::vehicle::VehicleParams;

/// A 0.12 m solid line along the x axis on textured asphalt.
pub fn marked_scene() -> Scene {
    let mut scene = Scene::new(Arc::new(TextureTile::new(7)), 3);
    let line = straight(100.0);
    scene.add_polyline(&line, 0.12, &[(0.0, 100.0)], 0.1, roadmark::perception::MARKING_INTENSITY);
    scene
}

pub fn straight(length: f64) -> PathPolyline {
    PathPolyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(length, 0.0)]).expect("two distinct points")
}

/// Down-camera frame centred on the line at `x`.
pub fn down_frame(scene: &Scene, x: f64, t: f64) -> GroundRaster {
    let spec = CameraSpec::down(&VehicleParams::default());
    render_ground(scene, &Pose2D::new(x, 0.0, 0.0), &spec, t, &RenderOptions::default())
}

pub fn telemetry() -> TelemetryFrame {
    TelemetryFrame {
        seq: 4711,
        sent_at: 123_450,
        pose: Pose2D::new(12.5, -0.03, 0.01),
        speed: 2.9,
        steer: -0.02,
        mode: OperationMode::RemoteMonitoring,
        safe_halt_phase: None,
        paint_volume: 0.004,
        gun_lateral: 0.01,
        gun_height: 0.15,
        gun_trigger: true,
        width: None,
        velocity: None,
        faults: Vec::new(),
        link: LinkPhase::Active,
        ack_seq: 2469,
    }
}

/// Bundled scenario with perception off and a short horizon.
pub fn short_mission(name: &str, duration_s: f64) -> LoadedScenario {
    let overrides = [
        format!("duration_s={duration_s}"),
        "perception.width_hz=0".into(),
        "perception.velocity_hz=0".into(),
        "perception.detect_hz=0".into(),
    ];
    load_scenario(name, &overrides).expect("bundled scenario")
}
