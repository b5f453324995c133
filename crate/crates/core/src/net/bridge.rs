//! JSON messages exchanged with the browser control center over WebSocket.
//! Frame messages carry the same field names as the binary frames; the
//! bridge adds scene geometry and camera thumbnails, which never cross the
//! binary link.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{CommandFrame, Frame, Hello, Refuse, TelemetryFrame, Welcome};
use crate::geometry::Vec2;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("malformed bridge message: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraId {
    Forward,
    Down,
}

/// Downsampled 8-bit grayscale camera image, row-major, row 0 forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thumbnail {
    pub camera: CameraId,
    pub sent_at: u64,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

/// Static geometry for the top-down view, sent once per session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub path: Vec<Vec2>,
    pub markings: Vec<Vec<Vec2>>,
    pub max_steer: f64,
    pub wheelbase: f64,
    pub gun_mount: Vec2,
    pub max_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BridgeMessage {
    Command(CommandFrame),
    Telemetry(TelemetryFrame),
    Hello(Hello),
    Welcome(Welcome),
    Refuse(Refuse),
    Thumbnail(Thumbnail),
    Scene(SceneInfo),
}

impl From<Frame> for BridgeMessage {
    fn from(f: Frame) -> Self {
        match f {
            Frame::Command(c) => BridgeMessage::Command(c),
            Frame::Telemetry(t) => BridgeMessage::Telemetry(t),
            Frame::Hello(h) => BridgeMessage::Hello(h),
            Frame::Welcome(w) => BridgeMessage::Welcome(w),
            Frame::Refuse(r) => BridgeMessage::Refuse(r),
        }
    }
}

impl BridgeMessage {
    /// The binary frame this message maps to, if any.
    pub fn into_frame(self) -> Option<Frame> {
        Some(match self {
            BridgeMessage::Command(c) => Frame::Command(c),
            BridgeMessage::Telemetry(t) => Frame::Telemetry(t),
            BridgeMessage::Hello(h) => Frame::Hello(h),
            BridgeMessage::Welcome(w) => Frame::Welcome(w),
            BridgeMessage::Refuse(r) => Frame::Refuse(r),
            BridgeMessage::Thumbnail(_) | BridgeMessage::Scene(_) => return None,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("bridge messages serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, BridgeError> {
        Ok(serde_json::from_str(s)?)
    }
}
