//! Teleoperation link: binary frames, simulated channel, session lifecycle
//! and the JSON bridge for the browser console.

pub mod bridge;
pub mod channel;
pub mod session;
pub mod wire;

pub use bridge::{BridgeMessage, CameraId, SceneInfo, Thumbnail};
pub use channel::{Blackout, Channel, ChannelProfile};
pub use session::{heartbeat_supervise, operator_hello, HandshakeError, LatestWins, SessionState, VehicleEndpoint, DEFAULT_LINK_TIMEOUT_MS};
pub use wire::{
    decode_frame, encode_frame, read_stream_frame, write_stream_frame, CommandFrame, Frame, Hello, LinkPhase, Refuse, RefuseReason, Role, TelemetryFrame, Welcome,
    WireError, PROTOCOL_VERSION,
};
