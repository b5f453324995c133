use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use roadmark::control::{ControllerConfig, ControllerKind, LateralController};
use roadmark::geometry::Pose2D;
use roadmark::mission::run_headless;
use roadmark::net::{decode_frame, encode_frame, CommandFrame, Frame};
use roadmark::perception::{estimate_line_width, lk_velocity, FlowParams};
use roadmark::vehicle::{step, ControlInput, VehicleParams, VehicleState};
use roadmark_bench::{down_frame, marked_scene, short_mission, straight, telemetry};

fn plant(c: &mut Criterion) {
    let params = VehicleParams::default();
    let state = VehicleState::at_rest(Pose2D::new(0.0, 0.0, 0.0), &params);
    let input = ControlInput { steer_cmd: 0.1, speed_cmd: 3.0, gun_lateral_cmd: 0.0, gun_height_cmd: 0.15, trigger_cmd: true };
    c.bench_function("plant_step_10ms", |b| b.iter(|| step(black_box(&state), black_box(&input), 0.01, &params).unwrap()));
}

fn controllers(c: &mut Criterion) {
    let params = VehicleParams::default();
    let path = straight(200.0);
    let pose = Pose2D::new(50.0, 0.3, 0.05);
    for kind in ControllerKind::ALL {
        let mut ctl = LateralController::new(ControllerConfig::tuned(kind)).unwrap();
        c.bench_function(&format!("steer_{}", kind.name()), |b| b.iter(|| ctl.steer(black_box(&pose), 3.0, &path, &params)));
    }
}

fn perception(c: &mut Criterion) {
    let scene = marked_scene();
    let a = down_frame(&scene, 20.0, 0.0);
    let b = down_frame(&scene, 20.03, 0.01);
    c.bench_function("render_down_frame", |bch| bch.iter(|| down_frame(&scene, black_box(20.0), 0.0)));
    c.bench_function("width_estimate", |bch| bch.iter(|| estimate_line_width(black_box(&a), 0)));
    c.bench_function("lk_velocity", |bch| bch.iter(|| lk_velocity(black_box(&a), black_box(&b), 0.01, &FlowParams::default())));
}

fn wire(c: &mut Criterion) {
    let tel = Frame::Telemetry(telemetry());
    let cmd = Frame::Command(CommandFrame { seq: 9, sent_at: 450, steer_cmd: 0.02, speed_cmd: 3.0, gun_height_cmd: 0.15, ..Default::default() });
    let bytes = encode_frame(&tel);
    c.bench_function("encode_telemetry", |b| b.iter(|| encode_frame(black_box(&tel))));
    c.bench_function("decode_telemetry", |b| b.iter(|| decode_frame(black_box(&bytes)).unwrap()));
    c.bench_function("encode_command", |b| b.iter(|| encode_frame(black_box(&cmd))));
}

fn mission(c: &mut Criterion) {
    let sc = short_mission("repaint_straight", 5.0);
    let mut g = c.benchmark_group("mission");
    g.sample_size(10);
    g.bench_function("repaint_straight_5s_headless", |b| b.iter(|| run_headless(black_box(&sc), None).unwrap()));
    g.finish();
}

criterion_group!(benches, plant, controllers, perception, wire, mission);
criterion_main!(benches);
