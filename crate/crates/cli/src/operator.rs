//! Scripted operator over the binary TCP link. Drives a served vehicle with
//! the same command logic the headless runner uses.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use roadmark::mission::{MissionError, MissionSetup, ScriptedOperator, COMMAND_EVERY_MS};
use roadmark::net::{operator_hello, read_stream_frame, write_stream_frame, Frame, HandshakeError, TelemetryFrame, Welcome};
use roadmark::scenario::LoadedScenario;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("operator link: {0}")]
    Io(#[from] io::Error),
    #[error("vehicle refused the session: {0}")]
    Refused(#[from] HandshakeError),
    #[error("unexpected frame during handshake: {0}")]
    Protocol(String),
    #[error(transparent)]
    Mission(#[from] MissionError),
}

/// Sends `Hello` and waits for the vehicle's answer.
pub fn handshake<S: io::Read + Write>(stream: &mut S) -> Result<Welcome, ClientError> {
    write_stream_frame(stream, &Frame::Hello(operator_hello()))?;
    stream.flush()?;
    match read_stream_frame(stream)? {
        Some(Frame::Welcome(w)) => Ok(w),
        Some(Frame::Refuse(r)) => Err(HandshakeError::from_refuse(&r).into()),
        Some(other) => Err(ClientError::Protocol(format!("{other:?}"))),
        None => Err(ClientError::Protocol("connection closed".into())),
    }
}

#[derive(Debug, Clone, Default)]
pub struct OperatorSummary {
    pub welcome: Option<Welcome>,
    pub commands_sent: u64,
    pub telemetry_received: u64,
    pub last_telemetry: Option<TelemetryFrame>,
}

/// Connects to a served vehicle and runs the scenario's operator script
/// until the vehicle closes the link.
///
/// In lockstep the next command is sent as soon as the telemetry it depends
/// on arrives; otherwise commands follow the wall clock every 50 ms.
pub fn run_scripted(loaded: &LoadedScenario, addr: SocketAddr, lockstep: bool) -> Result<OperatorSummary, ClientError> {
    let sc = &loaded.scenario;
    let setup = Arc::new(MissionSetup::build(sc)?);
    let mut op = ScriptedOperator::new(setup, sc.operator.clone(), sc.mission.speed);
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let welcome = handshake(&mut stream)?;
    let mut summary = OperatorSummary { welcome: Some(welcome), ..Default::default() };
    let mut writer = BufWriter::new(stream.try_clone()?);
    let mut send = |frame: Frame, summary: &mut OperatorSummary| -> io::Result<()> {
        write_stream_frame(&mut writer, &frame)?;
        writer.flush()?;
        summary.commands_sent += 1;
        Ok(())
    };

    if lockstep {
        let mut reader = BufReader::new(stream);
        let mut next = welcome.session_epoch;
        send(Frame::Command(op.act(next)), &mut summary)?;
        while let Some(frame) = read_frame_or_eof(&mut reader)? {
            if let Frame::Telemetry(tel) = frame {
                let t = tel.sent_at;
                summary.telemetry_received += 1;
                op.receive(tel.clone());
                summary.last_telemetry = Some(tel);
                if t >= next {
                    next = t + COMMAND_EVERY_MS;
                    if send(Frame::Command(op.act(next)), &mut summary).is_err() {
                        break;
                    }
                }
            }
        }
        return Ok(summary);
    }

    let (tx, rx) = mpsc::channel();
    let reader_stream = stream.try_clone()?;
    thread::spawn(move || {
        let mut reader = BufReader::new(reader_stream);
        while let Ok(Some(frame)) = read_frame_or_eof(&mut reader) {
            if tx.send(frame).is_err() {
                return;
            }
        }
    });
    let started = Instant::now();
    let mut tick = 0u64;
    loop {
        let due = started + Duration::from_millis(tick * COMMAND_EVERY_MS);
        loop {
            let wait = due.saturating_duration_since(Instant::now());
            match rx.recv_timeout(wait) {
                Ok(Frame::Telemetry(tel)) => {
                    summary.telemetry_received += 1;
                    op.receive(tel.clone());
                    summary.last_telemetry = Some(tel);
                }
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => return Ok(summary),
            }
        }
        let now = welcome.session_epoch + tick * COMMAND_EVERY_MS;
        if send(Frame::Command(op.act(now)), &mut summary).is_err() {
            return Ok(summary);
        }
        tick += 1;
    }
}

/// A reset or aborted connection counts as the vehicle hanging up.
fn read_frame_or_eof<R: io::Read>(r: &mut R) -> io::Result<Option<Frame>> {
    match read_stream_frame(r) {
        Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted | io::ErrorKind::UnexpectedEof) => Ok(None),
        other => other,
    }
}
