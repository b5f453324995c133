use std::io::{BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use roadmark::mission::run_headless;
use roadmark::modes::OperationMode;
use roadmark::net::{read_stream_frame, write_stream_frame, BridgeMessage, CameraId, ChannelProfile, CommandFrame, Frame, HandshakeError};
use roadmark::qa::{read_log, EndReason, MissionEvent};
use roadmark::scenario::{load_scenario, LoadedScenario};
use roadmark_cli::operator::{handshake, run_scripted, ClientError};
use roadmark_cli::serve::{ChannelChoice, Ports, ServeSummary};
use roadmark_cli::{ServeConfig, ServeError, Server};
use tungstenite::stream::MaybeTlsStream;
use tungstenite::{Message, WebSocket};

fn scenario(name: &str, overrides: &[&str]) -> LoadedScenario {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    load_scenario(name, &ov).unwrap()
}

/// Binds on the first base port whose three ports are all free.
fn bind_free(mut cfg: ServeConfig) -> Server {
    let mut base = 20000 + (std::process::id() % 500) as u16 * 60;
    loop {
        cfg.port = base;
        match Server::bind(cfg.clone()) {
            Ok(s) => return s,
            Err(ServeError::Bind { .. }) => base += 3,
            Err(e) => panic!("{e}"),
        }
    }
}

struct Running {
    ports: Ports,
    stop: Arc<AtomicBool>,
    handle: thread::JoinHandle<Result<ServeSummary, ServeError>>,
}

impl Running {
    fn start(cfg: ServeConfig) -> Self {
        let server = bind_free(cfg);
        let (ports, stop) = (server.ports(), server.stop_handle());
        Running { ports, stop, handle: thread::spawn(move || server.run()) }
    }

    fn addr(&self, port: u16) -> SocketAddr {
        SocketAddr::from(([127, 0, 0, 1], port))
    }

    fn finish(self) -> ServeSummary {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.join().unwrap().unwrap()
    }
}

fn http_get(port: u16, target: &str) -> (u16, String, Vec<u8>) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(s, "GET {target} HTTP/1.1\r\nHost: localhost\r\n\r\n").unwrap();
    let mut raw = Vec::new();
    s.read_to_end(&mut raw).unwrap();
    let split = raw.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
    let head = String::from_utf8(raw[..split].to_vec()).unwrap();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let ctype = head.lines().find_map(|l| l.strip_prefix("Content-Type: ")).unwrap_or("").to_string();
    (status, ctype, raw[split + 4..].to_vec())
}

fn out_dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn lockstep_serve_logs_exactly_like_headless() {
    let sc = scenario("repaint_straight", &["perception.velocity_hz=0"]);
    let dir = out_dir();
    let headless_log = dir.path().join("headless.jsonl");
    let headless = run_headless(&sc, Some(&headless_log)).unwrap();

    let mut cfg = ServeConfig::new(sc.clone(), 0, dir.path().join("served"));
    cfg.lockstep = true;
    let server = Running::start(cfg);
    let op = run_scripted(&sc, server.addr(server.ports.binary), true).unwrap();
    let summary = server.handle.join().unwrap().unwrap();

    assert!(op.telemetry_received > 400);
    assert_eq!(std::fs::read(&headless_log).unwrap(), std::fs::read(&summary.log_path).unwrap());
    assert_eq!(summary.report.end_reason, EndReason::Completed);
    assert_eq!(summary.report.paint_digest, headless.report.paint_digest);
    for f in ["report.json", "width.csv"] {
        assert!(dir.path().join("served").join(f).is_file(), "{f}");
    }
}

#[test]
fn lockstep_needs_an_ideal_channel() {
    let sc = scenario("repaint_straight", &[]);
    let mut cfg = ServeConfig::new(sc.clone(), 0, out_dir().path().to_path_buf());
    cfg.lockstep = true;
    cfg.channel = ChannelChoice::Profile(ChannelProfile::cellular());
    assert!(matches!(Server::bind(cfg.clone()), Err(ServeError::Usage(_))));
    // the scenario's own blackouts count too
    cfg.scenario = scenario("link_blackout", &["channel.base_delay_ms=0", "channel.jitter_ms=0", "channel.loss_rate=0.0"]);
    cfg.channel = ChannelChoice::Scenario;
    assert!(matches!(Server::bind(cfg), Err(ServeError::Usage(_))));
}

#[test]
fn busy_port_is_a_bind_error() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port();
    for p in [port, port.saturating_sub(1), port.saturating_sub(2)] {
        let cfg = ServeConfig::new(scenario("repaint_straight", &[]), p, out_dir().path().to_path_buf());
        assert!(matches!(Server::bind(cfg), Err(ServeError::Bind { .. })), "base {p}");
    }
}

#[test]
fn without_an_operator_the_machine_stays_put() {
    let sc = scenario("repaint_straight", &["duration_s=1.5", "perception.width_hz=0", "perception.velocity_hz=0", "perception.detect_hz=0"]);
    let dir = out_dir();
    let server = Running::start(ServeConfig::new(sc, 0, dir.path().to_path_buf()));
    let summary = server.handle.join().unwrap().unwrap();
    assert_eq!(summary.report.end_reason, EndReason::Timeout);
    assert_eq!(summary.report.mode_timeline.iter().map(|(_, m)| *m).collect::<Vec<_>>(), vec![OperationMode::RemoteDriving]);
    let records = read_log(&summary.log_path).unwrap();
    let Some(MissionEvent::MissionEnd(end)) = records.last().map(|r| &r.event) else {
        panic!("log has no mission_end");
    };
    assert_eq!(end.final_state.speed, 0.0);
    assert_eq!(end.paint_segments, 0);
}

/// Sends a heartbeat command every 50 ms until told to stop; `estop` flips
/// the e-stop bit on the next command.
fn drive(stream: TcpStream, epoch: u64, estop: Arc<AtomicBool>, done: Arc<AtomicBool>) -> thread::JoinHandle<()> {
    thread::spawn(move || {
        let mut w = stream;
        let started = Instant::now();
        let mut seq = 0u32;
        while !done.load(Ordering::Relaxed) {
            seq += 1;
            let sent_at = epoch + started.elapsed().as_millis() as u64 / 50 * 50;
            let cmd = CommandFrame { seq, sent_at, speed_cmd: 1.0, gun_height_cmd: 0.15, estop: estop.load(Ordering::Relaxed), ..Default::default() };
            if write_stream_frame(&mut w, &Frame::Command(cmd)).is_err() {
                return;
            }
            thread::sleep(Duration::from_millis(50));
        }
    })
}

#[test]
fn estop_over_tcp_halts_and_the_server_keeps_serving() {
    let sc = scenario("repaint_straight", &["duration_s=60", "perception.width_hz=0", "perception.velocity_hz=0", "perception.detect_hz=0"]);
    let dir = out_dir();
    let server = Running::start(ServeConfig::new(sc, 0, dir.path().to_path_buf()));

    let mut stream = TcpStream::connect(server.addr(server.ports.binary)).unwrap();
    let welcome = handshake(&mut stream).unwrap();
    let (estop, done) = (Arc::new(AtomicBool::new(false)), Arc::new(AtomicBool::new(false)));
    let driver = drive(stream.try_clone().unwrap(), welcome.session_epoch, estop.clone(), done.clone());

    let (tx, rx) = mpsc::channel();
    let reader = stream.try_clone().unwrap();
    thread::spawn(move || {
        let mut r = BufReader::new(reader);
        while let Ok(Some(Frame::Telemetry(t))) = read_stream_frame(&mut r) {
            if tx.send(t).is_err() {
                return;
            }
        }
    });

    let deadline = Instant::now() + Duration::from_secs(30);
    let mut moving = false;
    let mut halted = false;
    while Instant::now() < deadline && !halted {
        let Ok(t) = rx.recv_timeout(Duration::from_secs(5)) else { break };
        if !moving && t.speed > 0.5 {
            moving = true;
            estop.store(true, Ordering::Relaxed);
        }
        halted = moving && t.mode == OperationMode::SafeHalt;
    }
    assert!(moving && halted, "moving {moving}, halted {halted}");

    // still serving: a second operator is turned away, assets answer
    let mut second = TcpStream::connect(server.addr(server.ports.binary)).unwrap();
    assert!(matches!(handshake(&mut second), Err(ClientError::Refused(HandshakeError::OperatorBusy))));
    assert_eq!(http_get(server.ports.http, "/config.json").0, 200);
    assert!(rx.recv_timeout(Duration::from_secs(5)).is_ok(), "telemetry stopped");

    done.store(true, Ordering::Relaxed);
    driver.join().unwrap();
    let summary = server.finish();
    assert_eq!(summary.report.end_reason, EndReason::Stopped);
    assert!(summary.report.mode_timeline.iter().any(|(_, m)| *m == OperationMode::SafeHalt));
}

type Ws = WebSocket<MaybeTlsStream<TcpStream>>;

fn ws_connect(port: u16) -> Ws {
    let (ws, _) = tungstenite::connect(format!("ws://127.0.0.1:{port}")).unwrap();
    if let MaybeTlsStream::Plain(s) = ws.get_ref() {
        s.set_read_timeout(Some(Duration::from_millis(20))).unwrap();
    }
    ws
}

fn ws_next(ws: &mut Ws) -> Option<BridgeMessage> {
    match ws.read() {
        Ok(Message::Text(t)) => Some(BridgeMessage::from_json(t.as_str()).unwrap()),
        Ok(_) => None,
        Err(tungstenite::Error::Io(e)) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => None,
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn websocket_bridge_carries_a_json_session() {
    let sc = scenario("repaint_straight", &["duration_s=60", "perception.velocity_hz=0", "perception.detect_hz=0"]);
    let dir = out_dir();
    let server = Running::start(ServeConfig::new(sc, 0, dir.path().to_path_buf()));

    let mut observer = ws_connect(server.ports.bridge);
    let mut operator = ws_connect(server.ports.bridge);
    let deadline = Instant::now() + Duration::from_secs(20);
    let first = loop {
        if let Some(m) = ws_next(&mut operator) {
            break m;
        }
        assert!(Instant::now() < deadline, "no scene");
    };
    let BridgeMessage::Scene(scene) = first else { panic!("first message {first:?}") };
    assert!(scene.path.len() > 2 && scene.wheelbase > 0.0);

    operator.send(Message::text(r#"{"type":"hello","version":1,"role":"operator"}"#)).unwrap();
    let epoch = loop {
        match ws_next(&mut operator) {
            Some(BridgeMessage::Welcome(w)) => break w.session_epoch,
            Some(BridgeMessage::Telemetry(_) | BridgeMessage::Thumbnail(_)) | None => {}
            Some(other) => panic!("unexpected {other:?}"),
        }
        assert!(Instant::now() < deadline, "no welcome");
    };

    let started = Instant::now();
    let mut seq = 0u32;
    let mut op_speed = 0.0f64;
    while op_speed < 0.3 {
        assert!(Instant::now() < deadline, "operator never saw the machine move");
        seq += 1;
        let sent_at = epoch + started.elapsed().as_millis() as u64 / 50 * 50;
        let cmd = CommandFrame { seq, sent_at, speed_cmd: 1.0, gun_height_cmd: 0.15, ..Default::default() };
        operator.send(Message::text(BridgeMessage::Command(cmd).to_json())).unwrap();
        while let Some(m) = ws_next(&mut operator) {
            if let BridgeMessage::Telemetry(t) = m {
                op_speed = t.speed;
            }
        }
        while ws_next(&mut observer).is_some() {}
    }

    // the observer sees telemetry and camera thumbnails
    let (mut telemetry, mut thumbs) = (0, Vec::new());
    let until = Instant::now() + Duration::from_secs(2);
    while Instant::now() < until {
        match ws_next(&mut observer) {
            Some(BridgeMessage::Telemetry(_)) => telemetry += 1,
            Some(BridgeMessage::Thumbnail(t)) => thumbs.push(t),
            _ => {}
        }
    }
    assert!(telemetry > 0);
    assert!(thumbs.iter().any(|t| t.camera == CameraId::Down && t.rows > 0 && t.pixels.len() == t.rows * t.cols));

    let summary = server.finish();
    assert_eq!(summary.report.end_reason, EndReason::Stopped);
}

#[test]
fn observers_get_the_scene_first() {
    let sc = scenario("repaint_straight", &["duration_s=60", "perception.width_hz=0", "perception.velocity_hz=0", "perception.detect_hz=0"]);
    let dir = out_dir();
    let server = Running::start(ServeConfig::new(sc, 0, dir.path().to_path_buf()));
    let mut ws = ws_connect(server.ports.bridge);
    let deadline = Instant::now() + Duration::from_secs(20);
    let first = loop {
        if let Some(m) = ws_next(&mut ws) {
            break m;
        }
        assert!(Instant::now() < deadline);
    };
    assert!(matches!(first, BridgeMessage::Scene(_)), "{first:?}");
    // a malformed message is ignored, not fatal
    ws.send(Message::text("{not json")).unwrap();
    let until = Instant::now() + Duration::from_millis(500);
    let mut telemetry = 0;
    while Instant::now() < until {
        if let Some(BridgeMessage::Telemetry(_)) = ws_next(&mut ws) {
            telemetry += 1;
        }
    }
    assert!(telemetry > 0);
    server.finish();
}

fn write(path: &Path, body: &str) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(path, body).unwrap();
}

#[test]
fn static_assets_come_from_the_ui_dir() {
    let ui = out_dir();
    write(&ui.path().join("index.html"), "<!doctype html><title>console</title>");
    write(&ui.path().join("assets/app.js"), "console.log('hi')");
    write(&ui.path().parent().unwrap().join("outside.txt"), "secret");
    let sc = scenario("repaint_straight", &["duration_s=60", "perception.width_hz=0", "perception.velocity_hz=0", "perception.detect_hz=0"]);
    let dir = out_dir();
    let mut cfg = ServeConfig::new(sc, 0, dir.path().to_path_buf());
    cfg.ui_dir = Some(ui.path().to_path_buf());
    let server = Running::start(cfg);

    let (status, ctype, body) = http_get(server.ports.http, "/");
    assert_eq!((status, ctype.as_str()), (200, "text/html; charset=utf-8"));
    assert!(String::from_utf8(body).unwrap().contains("console"));
    let (status, ctype, body) = http_get(server.ports.http, "/assets/app.js?v=1");
    assert_eq!((status, ctype.as_str(), body.as_slice()), (200, "text/javascript; charset=utf-8", &b"console.log('hi')"[..]));
    assert_eq!(http_get(server.ports.http, "/missing.css").0, 404);
    assert_eq!(http_get(server.ports.http, "/../outside.txt").0, 404);
    assert_eq!(http_get(server.ports.http, "/%2e%2e/outside.txt").0, 404);

    let (status, ctype, body) = http_get(server.ports.http, "/config.json");
    assert_eq!((status, ctype.as_str()), (200, "application/json"));
    let cfg: serde_json::Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(cfg["bridge_port"], server.ports.bridge);
    assert_eq!(cfg["binary_port"], server.ports.binary);
    assert_eq!(cfg["protocol_version"], 1);
    server.finish();
}
