//! Binary frame layout: `u16` type tag, little-endian payload in fixed field
//! order, CRC32 of tag and payload.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose2D;
use crate::modes::{FaultKind, OperationMode, SafeHaltPhase};
use crate::perception::{VelocityEstimate, WidthSample};

pub const PROTOCOL_VERSION: u16 = 1;
/// Largest frame accepted on a stream.
pub const MAX_FRAME_LEN: usize = 64 * 1024;

const TAG_COMMAND: u16 = 0x0001;
const TAG_TELEMETRY: u16 = 0x0002;
const TAG_HELLO: u16 = 0x0010;
const TAG_WELCOME: u16 = 0x0011;
const TAG_REFUSE: u16 = 0x0012;
const NONE_BYTE: u8 = 0xFF;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("unknown frame tag {0:#06x}")]
    BadTag(u16),
    #[error("buffer too short: needed {needed} bytes, got {got}")]
    ShortBuffer { needed: usize, got: usize },
    #[error("CRC mismatch: frame says {expected:#010x}, computed {computed:#010x}")]
    CrcMismatch { expected: u32, computed: u32 },
    #[error("invalid value for field {0}")]
    InvalidField(&'static str),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CommandFrame {
    pub seq: u32,
    /// Milliseconds since the session epoch.
    pub sent_at: u64,
    pub steer_cmd: f64,
    pub speed_cmd: f64,
    pub gun_lateral_cmd: f64,
    pub gun_height_cmd: f64,
    pub trigger_cmd: bool,
    pub mode_request: Option<OperationMode>,
    /// Overrides every other field.
    pub estop: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkPhase {
    #[default]
    Connecting,
    Active,
    Degraded,
    Lost,
}

impl LinkPhase {
    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(c: u8) -> Option<Self> {
        [LinkPhase::Connecting, LinkPhase::Active, LinkPhase::Degraded, LinkPhase::Lost].get(c as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub seq: u32,
    pub sent_at: u64,
    pub pose: Pose2D,
    pub speed: f64,
    pub steer: f64,
    pub mode: OperationMode,
    pub safe_halt_phase: Option<SafeHaltPhase>,
    pub paint_volume: f64,
    pub gun_lateral: f64,
    pub gun_height: f64,
    pub gun_trigger: bool,
    pub width: Option<WidthSample>,
    pub velocity: Option<VelocityEstimate>,
    pub faults: Vec<FaultKind>,
    pub link: LinkPhase,
    /// Last command applied by the vehicle.
    pub ack_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Vehicle,
    Operator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub version: u16,
    pub role: Role,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Welcome {
    pub version: u16,
    /// Vehicle clock (ms) at which the session starts.
    pub session_epoch: u64,
    pub mode: OperationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefuseReason {
    VersionMismatch,
    OperatorBusy,
    BadRole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refuse {
    pub reason: RefuseReason,
    pub version: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Frame {
    Command(CommandFrame),
    Telemetry(TelemetryFrame),
    Hello(Hello),
    Welcome(Welcome),
    Refuse(Refuse),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    fn bool(&mut self, v: bool) {
        self.u8(v as u8);
    }
    fn opt_code(&mut self, v: Option<u8>) {
        self.u8(v.unwrap_or(NONE_BYTE));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(WireError::ShortBuffer { needed: end, got: self.buf.len() });
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bool(&mut self, field: &'static str) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::InvalidField(field)),
        }
    }
    fn present(&mut self, field: &'static str) -> Result<bool, WireError> {
        self.bool(field)
    }
    fn opt<T>(&mut self, field: &'static str, f: impl Fn(u8) -> Option<T>) -> Result<Option<T>, WireError> {
        match self.u8()? {
            NONE_BYTE => Ok(None),
            c => f(c).map(Some).ok_or(WireError::InvalidField(field)),
        }
    }
}

fn mode_from(c: u8, field: &'static str) -> Result<OperationMode, WireError> {
    OperationMode::from_code(c).ok_or(WireError::InvalidField(field))
}

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(160));
    match frame {
        Frame::Command(c) => {
            w.u16(TAG_COMMAND);
            w.u32(c.seq);
            w.u64(c.sent_at);
            w.f64(c.steer_cmd);
            w.f64(c.speed_cmd);
            w.f64(c.gun_lateral_cmd);
            w.f64(c.gun_height_cmd);
            w.bool(c.trigger_cmd);
            w.opt_code(c.mode_request.map(OperationMode::code));
            w.bool(c.estop);
        }
        Frame::Telemetry(t) => {
            w.u16(TAG_TELEMETRY);
            w.u32(t.seq);
            w.u64(t.sent_at);
            w.f64(t.pose.x);
            w.f64(t.pose.y);
            w.f64(t.pose.heading);
            w.f64(t.speed);
            w.f64(t.steer);
            w.u8(t.mode.code());
            w.opt_code(t.safe_halt_phase.map(SafeHaltPhase::code));
            w.f64(t.paint_volume);
            w.f64(t.gun_lateral);
            w.f64(t.gun_height);
            w.bool(t.gun_trigger);
            w.bool(t.width.is_some());
            if let Some(s) = &t.width {
                w.u64(s.frame_index);
                w.bool(s.width.is_some());
                w.f64(s.width.unwrap_or(0.0));
                w.f64(s.confidence);
                w.f64(s.timestamp);
            }
            w.bool(t.velocity.is_some());
            if let Some(v) = &t.velocity {
                w.f64(v.speed);
                w.f64(v.confidence);
                w.bool(v.valid);
                w.f64(v.timestamp);
            }
            w.u8(t.faults.len() as u8);
            for f in &t.faults {
                w.u8(f.code());
            }
            w.u8(t.link.code());
            w.u32(t.ack_seq);
        }
        Frame::Hello(h) => {
            w.u16(TAG_HELLO);
            w.u16(h.version);
            w.u8(match h.role {
                Role::Vehicle => 0,
                Role::Operator => 1,
            });
        }
        Frame::Welcome(m) => {
            w.u16(TAG_WELCOME);
            w.u16(m.version);
            w.u64(m.session_epoch);
            w.u8(m.mode.code());
        }
        Frame::Refuse(r) => {
            w.u16(TAG_REFUSE);
            w.u8(match r.reason {
                RefuseReason::VersionMismatch => 0,
                RefuseReason::OperatorBusy => 1,
                RefuseReason::BadRole => 2,
            });
            w.u16(r.version);
        }
    }
    let crc = crc32fast::hash(&w.0);
    w.u32(crc);
    w.0
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame, WireError> {
    if bytes.len() < 6 {
        return Err(WireError::ShortBuffer { needed: 6, got: bytes.len() });
    }
    let tag = u16::from_le_bytes([bytes[0], bytes[1]]);
    if !matches!(tag, TAG_COMMAND | TAG_TELEMETRY | TAG_HELLO | TAG_WELCOME | TAG_REFUSE) {
        return Err(WireError::BadTag(tag));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let expected = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if expected != computed {
        return Err(WireError::CrcMismatch { expected, computed });
    }
    let mut r = Reader { buf: body, pos: 2 };
    let frame = match tag {
        TAG_COMMAND => Frame::Command(CommandFrame {
            seq: r.u32()?,
            sent_at: r.u64()?,
            steer_cmd: r.f64()?,
            speed_cmd: r.f64()?,
            gun_lateral_cmd: r.f64()?,
            gun_height_cmd: r.f64()?,
            trigger_cmd: r.bool("trigger_cmd")?,
            mode_request: r.opt("mode_request", OperationMode::from_code)?,
            estop: r.bool("estop")?,
        }),
        TAG_TELEMETRY => {
            let seq = r.u32()?;
            let sent_at = r.u64()?;
            let pose = Pose2D { x: r.f64()?, y: r.f64()?, heading: r.f64()? };
            let speed = r.f64()?;
            let steer = r.f64()?;
            let mode = mode_from(r.u8()?, "mode")?;
            let safe_halt_phase = r.opt("safe_halt_phase", SafeHaltPhase::from_code)?;
            let paint_volume = r.f64()?;
            let gun_lateral = r.f64()?;
            let gun_height = r.f64()?;
            let gun_trigger = r.bool("gun_trigger")?;
            let width = if r.present("width")? {
                let frame_index = r.u64()?;
                let has = r.bool("width.width")?;
                let w = r.f64()?;
                Some(WidthSample {
                    frame_index,
                    width: has.then_some(w),
                    confidence: r.f64()?,
                    timestamp: r.f64()?,
                })
            } else {
                None
            };
            let velocity = if r.present("velocity")? {
                Some(VelocityEstimate {
                    speed: r.f64()?,
                    confidence: r.f64()?,
                    valid: r.bool("velocity.valid")?,
                    timestamp: r.f64()?,
                })
            } else {
                None
            };
            let n = r.u8()? as usize;
            let mut faults = Vec::with_capacity(n);
            for _ in 0..n {
                faults.push(FaultKind::from_code(r.u8()?).ok_or(WireError::InvalidField("faults"))?);
            }
            let link = LinkPhase::from_code(r.u8()?).ok_or(WireError::InvalidField("link"))?;
            Frame::Telemetry(TelemetryFrame {
                seq,
                sent_at,
                pose,
                speed,
                steer,
                mode,
                safe_halt_phase,
                paint_volume,
                gun_lateral,
                gun_height,
                gun_trigger,
                width,
                velocity,
                faults,
                link,
                ack_seq: r.u32()?,
            })
        }
        TAG_HELLO => Frame::Hello(Hello {
            version: r.u16()?,
            role: match r.u8()? {
                0 => Role::Vehicle,
                1 => Role::Operator,
                _ => return Err(WireError::InvalidField("role")),
            },
        }),
        TAG_WELCOME => Frame::Welcome(Welcome {
            version: r.u16()?,
            session_epoch: r.u64()?,
            mode: mode_from(r.u8()?, "mode")?,
        }),
        TAG_REFUSE => Frame::Refuse(Refuse {
            reason: match r.u8()? {
                0 => RefuseReason::VersionMismatch,
                1 => RefuseReason::OperatorBusy,
                2 => RefuseReason::BadRole,
                _ => return Err(WireError::InvalidField("reason")),
            },
            version: r.u16()?,
        }),
        _ => unreachable!(),
    };
    if r.pos != body.len() {
        return Err(WireError::TrailingBytes(body.len() - r.pos));
    }
    Ok(frame)
}

/// Writes one frame with a `u32` little-endian length prefix.
pub fn write_stream_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let bytes = encode_frame(frame);
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads one length-prefixed frame. `Ok(None)` on clean end of stream.
pub fn read_stream_frame<R: Read>(r: &mut R) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let n = u32::from_le_bytes(len) as usize;
    if n > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {n} bytes exceeds limit")));
    }
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    decode_frame(&buf).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}
