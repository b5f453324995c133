//! Served vehicle: the simulation paced against the wall clock, the binary
//! operator link on port N, the JSON/WebSocket bridge on N + 1 and the
//! static console assets on N + 2.
//!
//! Network threads only parse and forward; every decision is taken on the
//! simulation thread in tick order, so a served mission logs exactly like a
//! headless one. In lockstep mode the vehicle waits at each command period
//! for the operator's frame instead of following the wall clock.

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::{IpAddr, Ipv4Addr, Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use thiserror::Error;
use tungstenite::Message;

use roadmark::mission::{link_profiles, MissionError, MissionSetup, RunReport, RuntimeOptions, VehicleRuntime, TICK_MS};
use roadmark::net::session::COMMAND_PERIOD_MS;
use roadmark::net::{
    read_stream_frame, write_stream_frame, BridgeMessage, CameraId, Channel, ChannelProfile, CommandFrame, Frame, Hello, TelemetryFrame, Thumbnail,
    PROTOCOL_VERSION,
};
use roadmark::perception::GroundRaster;
use roadmark::qa::{export_width_csv, EndReason, MissionLog};
use roadmark::scenario::LoadedScenario;

use crate::commands::{LOG_FILE, REPORT_FILE, WIDTH_FILE};
use crate::http::{serve_static, StaticSite};

/// Downsampling factor of bridge thumbnails.
pub const THUMBNAIL_FACTOR: usize = 4;
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error("server I/O: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error("{0}")]
    Usage(String),
}

/// Link simulated between the network and the vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChannelChoice {
    /// The scenario's own profile and blackouts.
    Scenario,
    Profile(ChannelProfile),
}

impl FromStr for ChannelChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "scenario" {
            return Ok(ChannelChoice::Scenario);
        }
        ChannelProfile::from_str(s).map(ChannelChoice::Profile).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub scenario: LoadedScenario,
    pub host: IpAddr,
    /// Binary link port; the bridge and the assets use the next two.
    pub port: u16,
    pub channel: ChannelChoice,
    pub lockstep: bool,
    pub ui_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl ServeConfig {
    pub fn new(scenario: LoadedScenario, port: u16, out_dir: PathBuf) -> Self {
        Self { scenario, host: IpAddr::V4(Ipv4Addr::LOCALHOST), port, channel: ChannelChoice::Scenario, lockstep: false, ui_dir: None, out_dir }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ports {
    pub binary: u16,
    pub bridge: u16,
    pub http: u16,
}

#[derive(Debug, Clone)]
pub struct ServeSummary {
    pub report: RunReport,
    pub log_path: PathBuf,
}

type PeerId = u64;

enum PeerLink {
    Binary(TcpStream),
    Bridge(Sender<String>),
}

enum Inbound {
    Open(PeerId, PeerLink),
    Hello(PeerId, Hello),
    Command(PeerId, CommandFrame),
    Closed(PeerId),
}

pub struct Server {
    cfg: ServeConfig,
    binary: TcpListener,
    bridge: TcpListener,
    http: TcpListener,
    ports: Ports,
    stop: Arc<AtomicBool>,
}

fn bind(host: IpAddr, port: u16) -> Result<TcpListener, ServeError> {
    let addr = SocketAddr::new(host, port);
    TcpListener::bind(addr).map_err(|source| ServeError::Bind { addr, source })
}

fn is_ideal(p: &ChannelProfile) -> bool {
    p.base_delay_ms == 0 && p.jitter_ms == 0 && p.loss_rate == 0.0
}

fn profiles(cfg: &ServeConfig) -> (ChannelProfile, ChannelProfile) {
    let (up, down) = link_profiles(&cfg.scenario.scenario);
    match cfg.channel {
        ChannelChoice::Scenario => (up, down),
        ChannelChoice::Profile(p) => (ChannelProfile { seed: up.seed, ..p }, ChannelProfile { seed: down.seed, ..p }),
    }
}

impl Server {
    /// Binds the three ports. Fails when any is taken.
    pub fn bind(cfg: ServeConfig) -> Result<Self, ServeError> {
        if cfg.port > u16::MAX - 2 {
            return Err(ServeError::Usage(format!("port {} leaves no room for the bridge and asset ports", cfg.port)));
        }
        if cfg.lockstep {
            let (up, down) = profiles(&cfg);
            let blackouts = cfg.channel == ChannelChoice::Scenario && !cfg.scenario.scenario.channel.blackouts.is_empty();
            if !is_ideal(&up) || !is_ideal(&down) || blackouts {
                return Err(ServeError::Usage("lockstep needs a zero-latency, lossless channel (try --channel ideal)".into()));
            }
        }
        let binary = bind(cfg.host, cfg.port)?;
        let bridge = bind(cfg.host, cfg.port + 1)?;
        let http = bind(cfg.host, cfg.port + 2)?;
        let ports = Ports { binary: binary.local_addr()?.port(), bridge: bridge.local_addr()?.port(), http: http.local_addr()?.port() };
        Ok(Self { cfg, binary, bridge, http, ports, stop: Arc::new(AtomicBool::new(false)) })
    }

    pub fn ports(&self) -> Ports {
        self.ports
    }

    /// Setting the flag ends the mission with [`EndReason::Stopped`].
    pub fn stop_handle(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Runs the mission to its end, then writes the log, report and width
    /// CSV to the output directory and closes every connection.
    pub fn run(self) -> Result<ServeSummary, ServeError> {
        let Server { cfg, binary, bridge, http, ports, stop } = self;
        std::fs::create_dir_all(&cfg.out_dir)?;
        let log_path = cfg.out_dir.join(LOG_FILE);
        let setup = Arc::new(MissionSetup::build(&cfg.scenario.scenario)?);
        let log = MissionLog::create(&log_path).map_err(MissionError::from)?;
        let opts = RuntimeOptions { end_on_secured: false, keep_rasters: true };
        let vehicle = VehicleRuntime::new(setup.clone(), &cfg.scenario, log, opts)?;

        let (tx, rx) = mpsc::channel();
        let ids = Arc::new(AtomicU64::new(1));
        let config_json = serde_json::json!({ "protocol_version": PROTOCOL_VERSION, "binary_port": ports.binary, "bridge_port": ports.bridge }).to_string();
        let site = Arc::new(StaticSite::new(cfg.ui_dir.clone(), config_json));
        let threads: Vec<JoinHandle<()>> = vec![
            spawn_acceptor(binary, stop.clone(), tx.clone(), ids.clone(), binary_peer),
            spawn_acceptor(bridge, stop.clone(), tx.clone(), ids.clone(), bridge_peer),
            {
                let stop = stop.clone();
                thread::spawn(move || {
                    let _ = serve_static(http, site, stop);
                })
            },
        ];
        drop(tx);

        let (up, down) = profiles(&cfg);
        let blackouts = match cfg.channel {
            ChannelChoice::Scenario => cfg.scenario.scenario.channel.blackouts.clone(),
            ChannelChoice::Profile(_) => Vec::new(),
        };
        let mut sim = Sim {
            vehicle,
            uplink: Channel::new(up).with_blackouts(blackouts.clone()),
            downlink: Channel::new(down).with_blackouts(blackouts),
            hub: Hub::default(),
            lockstep: cfg.lockstep,
            scene: BridgeMessage::Scene(setup.scene_info()).to_json(),
            thumbnail_every: match cfg.scenario.scenario.perception.thumbnail_hz {
                0 => None,
                hz => Some((1000 / u64::from(hz)).div_ceil(TICK_MS).max(1) * TICK_MS),
            },
        };
        let result = sim.run(&rx, &stop);
        stop.store(true, Ordering::Relaxed);
        sim.hub.close_all();
        for t in threads {
            let _ = t.join();
        }
        let wall = result?;
        let outcome = sim.vehicle.finish()?;
        let report = RunReport::from_outcome(&cfg.scenario.scenario, &outcome, wall);
        std::fs::write(cfg.out_dir.join(REPORT_FILE), serde_json::to_string_pretty(&report).expect("report serializes") + "\n")?;
        std::fs::write(cfg.out_dir.join(WIDTH_FILE), export_width_csv(&outcome.records))?;
        Ok(ServeSummary { report, log_path })
    }
}

fn spawn_acceptor(
    listener: TcpListener,
    stop: Arc<AtomicBool>,
    tx: Sender<Inbound>,
    ids: Arc<AtomicU64>,
    peer: fn(TcpStream, PeerId, Sender<Inbound>, Arc<AtomicBool>),
) -> JoinHandle<()> {
    thread::spawn(move || {
        if listener.set_nonblocking(true).is_err() {
            return;
        }
        let mut peers = Vec::new();
        while !stop.load(Ordering::Relaxed) {
            match listener.accept() {
                Ok((stream, _)) => {
                    if stream.set_nonblocking(false).is_err() {
                        continue;
                    }
                    let _ = stream.set_nodelay(true);
                    let id = ids.fetch_add(1, Ordering::Relaxed);
                    let (tx, stop) = (tx.clone(), stop.clone());
                    peers.push(thread::spawn(move || peer(stream, id, tx, stop)));
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(_) => break,
            }
        }
        for p in peers {
            let _ = p.join();
        }
    })
}

/// Reader of one binary connection; replies are written by the simulation.
fn binary_peer(stream: TcpStream, id: PeerId, tx: Sender<Inbound>, _stop: Arc<AtomicBool>) {
    let Ok(writer) = stream.try_clone() else {
        return;
    };
    if tx.send(Inbound::Open(id, PeerLink::Binary(writer))).is_err() {
        return;
    }
    let mut reader = io::BufReader::new(stream);
    loop {
        let msg = match read_stream_frame(&mut reader) {
            Ok(Some(Frame::Hello(h))) => Inbound::Hello(id, h),
            Ok(Some(Frame::Command(c))) => Inbound::Command(id, c),
            Ok(Some(_)) => continue,
            Ok(None) | Err(_) => break,
        };
        if tx.send(msg).is_err() {
            return;
        }
    }
    let _ = tx.send(Inbound::Closed(id));
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

/// One bridge connection: JSON in both directions over a WebSocket.
fn bridge_peer(stream: TcpStream, id: PeerId, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    if ws.get_ref().set_read_timeout(Some(Duration::from_millis(5))).is_err() {
        return;
    }
    let (out_tx, out_rx) = mpsc::channel::<String>();
    if tx.send(Inbound::Open(id, PeerLink::Bridge(out_tx))).is_err() {
        return;
    }
    'conn: while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let msg = match BridgeMessage::from_json(text.as_str()) {
                    Ok(BridgeMessage::Hello(h)) => Some(Inbound::Hello(id, h)),
                    Ok(BridgeMessage::Command(c)) => Some(Inbound::Command(id, c)),
                    _ => None,
                };
                if let Some(m) = msg {
                    if tx.send(m).is_err() {
                        break;
                    }
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        loop {
            match out_rx.try_recv() {
                Ok(json) => {
                    if ws.send(Message::text(json)).is_err() {
                        break 'conn;
                    }
                }
                Err(mpsc::TryRecvError::Empty) => break,
                Err(mpsc::TryRecvError::Disconnected) => break 'conn,
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = tx.send(Inbound::Closed(id));
}

#[derive(Default)]
struct Hub {
    peers: HashMap<PeerId, PeerLink>,
    operator: Option<PeerId>,
    operator_left: bool,
    /// Lockstep only: operator commands held until their `sent_at`.
    held: BTreeMap<(u64, u32), CommandFrame>,
    latest_sent_at: Option<u64>,
}

impl Hub {
    fn send(&mut self, id: PeerId, frame: BridgeMessage) {
        let ok = match self.peers.get_mut(&id) {
            Some(PeerLink::Binary(s)) => match frame.into_frame() {
                Some(f) => write_stream_frame(s, &f).is_ok(),
                None => true,
            },
            Some(PeerLink::Bridge(tx)) => tx.send(frame.to_json()).is_ok(),
            None => true,
        };
        if !ok {
            self.drop_peer(id);
        }
    }

    fn broadcast_bridge(&mut self, json: &str, except: Option<PeerId>) {
        let dead: Vec<PeerId> = self
            .peers
            .iter()
            .filter(|(id, _)| Some(**id) != except)
            .filter_map(|(id, link)| match link {
                PeerLink::Bridge(tx) => tx.send(json.to_string()).is_err().then_some(*id),
                PeerLink::Binary(_) => None,
            })
            .collect();
        for id in dead {
            self.drop_peer(id);
        }
    }

    fn has_bridge_peers(&self) -> bool {
        self.peers.values().any(|l| matches!(l, PeerLink::Bridge(_)))
    }

    fn drop_peer(&mut self, id: PeerId) {
        if let Some(PeerLink::Binary(s)) = self.peers.remove(&id) {
            let _ = s.shutdown(Shutdown::Both);
        }
        if self.operator == Some(id) {
            self.operator = None;
            self.operator_left = true;
        }
    }

    fn close_all(&mut self) {
        let ids: Vec<PeerId> = self.peers.keys().copied().collect();
        for id in ids {
            self.drop_peer(id);
        }
    }
}

struct Sim {
    vehicle: VehicleRuntime,
    uplink: Channel<CommandFrame>,
    downlink: Channel<TelemetryFrame>,
    hub: Hub,
    lockstep: bool,
    scene: String,
    /// Thumbnail period in ms; `None` disables thumbnails.
    thumbnail_every: Option<u64>,
}

impl Sim {
    fn handle(&mut self, msg: Inbound, now: u64) -> Result<(), ServeError> {
        match msg {
            Inbound::Open(id, link) => {
                let bridge = matches!(link, PeerLink::Bridge(_));
                self.hub.peers.insert(id, link);
                if bridge {
                    let scene = self.scene.clone();
                    if let Some(PeerLink::Bridge(tx)) = self.hub.peers.get(&id) {
                        let _ = tx.send(scene);
                    }
                }
            }
            Inbound::Hello(id, hello) => match self.vehicle.connect(&hello, now) {
                Ok(w) => {
                    if let Some(old) = self.hub.operator.replace(id) {
                        if old != id {
                            self.hub.drop_peer(old);
                        }
                    }
                    self.hub.operator_left = false;
                    self.hub.held.clear();
                    self.hub.latest_sent_at = None;
                    self.hub.send(id, BridgeMessage::Welcome(w));
                }
                Err(MissionError::Handshake(e)) => {
                    self.hub.send(id, BridgeMessage::Refuse(e.to_refuse()));
                    if matches!(self.hub.peers.get(&id), Some(PeerLink::Binary(_))) {
                        self.hub.drop_peer(id);
                    }
                }
                Err(e) => return Err(e.into()),
            },
            Inbound::Command(id, cmd) => {
                if self.hub.operator == Some(id) {
                    self.hub.latest_sent_at = Some(self.hub.latest_sent_at.map_or(cmd.sent_at, |s| s.max(cmd.sent_at)));
                    if self.lockstep {
                        self.hub.held.insert((cmd.sent_at, cmd.seq), cmd);
                    } else {
                        self.uplink.send(now, cmd);
                    }
                }
            }
            Inbound::Closed(id) => self.hub.drop_peer(id),
        }
        Ok(())
    }

    fn release_held(&mut self, now: u64) {
        while let Some(entry) = self.hub.held.first_entry() {
            if entry.key().0 > now {
                break;
            }
            let cmd = entry.remove();
            self.uplink.send(now, cmd);
        }
    }

    /// Blocks until the operator's command for `now` is in, the operator
    /// leaves, or the server stops. Returns false once lockstep is over.
    fn wait_for_operator(&mut self, rx: &Receiver<Inbound>, now: u64, stop: &AtomicBool) -> Result<bool, ServeError> {
        loop {
            if self.hub.operator.is_some() && self.hub.latest_sent_at.is_some_and(|s| s >= now) {
                return Ok(true);
            }
            if self.hub.operator_left || stop.load(Ordering::Relaxed) {
                return Ok(false);
            }
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(msg) => self.handle(msg, now)?,
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return Ok(false),
            }
        }
    }

    fn thumbnails(&mut self, now: u64) {
        let make = |camera: CameraId, r: Option<&GroundRaster>| {
            r.map(|r| {
                let (rows, cols, pixels) = r.thumbnail(THUMBNAIL_FACTOR);
                BridgeMessage::Thumbnail(Thumbnail { camera, sent_at: now, rows, cols, pixels }).to_json()
            })
        };
        let msgs: Vec<String> = [make(CameraId::Forward, self.vehicle.forward_raster()), make(CameraId::Down, self.vehicle.down_raster())]
            .into_iter()
            .flatten()
            .collect();
        for m in msgs {
            self.hub.broadcast_bridge(&m, None);
        }
    }

    /// The tick loop. Returns the wall time spent.
    fn run(&mut self, rx: &Receiver<Inbound>, stop: &AtomicBool) -> Result<f64, ServeError> {
        let started = Instant::now();
        let mut origin = Instant::now();
        let mut lockstep = self.lockstep;
        let mut now = 0u64;
        loop {
            if stop.load(Ordering::Relaxed) {
                self.vehicle.stop(EndReason::Stopped);
                break;
            }
            if lockstep && now % COMMAND_PERIOD_MS == 0 && !self.wait_for_operator(rx, now, stop)? {
                lockstep = false;
                self.lockstep = false;
                origin = Instant::now() - Duration::from_millis(now);
                continue;
            }
            if !lockstep {
                let due = origin + Duration::from_millis(now);
                let wait = due.saturating_duration_since(Instant::now());
                if !wait.is_zero() {
                    thread::sleep(wait);
                }
            }
            while let Ok(msg) = rx.try_recv() {
                self.handle(msg, now)?;
            }
            self.release_held(now);
            let delivered = self.uplink.step(now);
            if let Some(tel) = self.vehicle.tick(now, delivered)? {
                self.downlink.send(now, tel);
            }
            for tel in self.downlink.step(now) {
                let json = BridgeMessage::Telemetry(tel.clone()).to_json();
                let op = self.hub.operator;
                if let Some(id) = op {
                    self.hub.send(id, BridgeMessage::Telemetry(tel));
                }
                self.hub.broadcast_bridge(&json, op);
            }
            if self.thumbnail_every.is_some_and(|p| now % p == 0) && self.hub.has_bridge_peers() {
                self.thumbnails(now);
            }
            if self.vehicle.end().is_some() {
                break;
            }
            now += TICK_MS;
        }
        Ok(started.elapsed().as_secs_f64())
    }
}
