//! Session lifecycle: handshake, heartbeat supervision and latest-wins
//! command ordering.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::wire::{Hello, LinkPhase, Refuse, RefuseReason, Role, Welcome, PROTOCOL_VERSION};
use crate::modes::{FaultEvent, FaultKind, OperationMode};

pub const DEFAULT_LINK_TIMEOUT_MS: u64 = 400;
pub const COMMAND_PERIOD_MS: u64 = 50;
pub const TELEMETRY_PERIOD_MS: u64 = 50;
pub const THUMBNAIL_PERIOD_MS: u64 = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: LinkPhase,
    /// Vehicle clock (ms) at which the session was established.
    pub epoch: u64,
    pub last_cmd_rx_at: Option<u64>,
    pub last_tel_rx_at: Option<u64>,
}

impl Default for SessionState {
    fn default() -> Self {
        Self::connecting()
    }
}

impl SessionState {
    pub fn connecting() -> Self {
        Self { phase: LinkPhase::Connecting, epoch: 0, last_cmd_rx_at: None, last_tel_rx_at: None }
    }

    /// A freshly established session. The handshake counts as the first
    /// sign of life.
    pub fn established(epoch: u64, now: u64) -> Self {
        Self { phase: LinkPhase::Active, epoch, last_cmd_rx_at: Some(now), last_tel_rx_at: Some(now) }
    }

    pub fn is_lost(&self) -> bool {
        self.phase == LinkPhase::Lost
    }

    /// Records a valid command frame. Returns `false` when the session is
    /// lost and the frame must be ignored.
    pub fn on_command(&mut self, now: u64) -> bool {
        match self.phase {
            LinkPhase::Lost | LinkPhase::Connecting => false,
            LinkPhase::Active | LinkPhase::Degraded => {
                self.last_cmd_rx_at = Some(now);
                self.phase = LinkPhase::Active;
                true
            }
        }
    }

    pub fn on_telemetry(&mut self, now: u64) {
        self.last_tel_rx_at = Some(now);
    }
}

/// Vehicle-side supervision of the command stream. Silence longer than
/// `timeout / 2` degrades the link; longer than `timeout` loses it and emits
/// a `link_timeout` fault exactly once. Only active or degraded sessions are
/// supervised.
pub fn heartbeat_supervise(session: &mut SessionState, now: u64, timeout: u64) -> Option<FaultEvent> {
    if !matches!(session.phase, LinkPhase::Active | LinkPhase::Degraded) {
        return None;
    }
    let last = session.last_cmd_rx_at.unwrap_or(session.epoch);
    let silence = now.saturating_sub(last);
    if silence > timeout {
        session.phase = LinkPhase::Lost;
        return Some(FaultEvent {
            kind: FaultKind::LinkTimeout,
            detail: format!("no command frame for {silence} ms"),
            timestamp: now as f64 / 1000.0,
        });
    }
    session.phase = if silence > timeout / 2 { LinkPhase::Degraded } else { LinkPhase::Active };
    None
}

/// Operator-side link health derived from telemetry gaps.
pub fn telemetry_health(session: &SessionState, now: u64, timeout: u64) -> LinkPhase {
    match session.phase {
        LinkPhase::Connecting | LinkPhase::Lost => session.phase,
        _ => {
            let silence = now.saturating_sub(session.last_tel_rx_at.unwrap_or(session.epoch));
            if silence > timeout {
                LinkPhase::Lost
            } else if silence > timeout / 2 {
                LinkPhase::Degraded
            } else {
                LinkPhase::Active
            }
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HandshakeError {
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    VersionMismatch { ours: u16, theirs: u16 },
    #[error("another operator is already connected")]
    OperatorBusy,
    #[error("peer announced an unexpected role")]
    BadRole,
}

impl HandshakeError {
    pub fn from_refuse(r: &Refuse) -> Self {
        match r.reason {
            RefuseReason::VersionMismatch => HandshakeError::VersionMismatch { ours: PROTOCOL_VERSION, theirs: r.version },
            RefuseReason::OperatorBusy => HandshakeError::OperatorBusy,
            RefuseReason::BadRole => HandshakeError::BadRole,
        }
    }

    pub fn to_refuse(&self) -> Refuse {
        let reason = match self {
            HandshakeError::VersionMismatch { .. } => RefuseReason::VersionMismatch,
            HandshakeError::OperatorBusy => RefuseReason::OperatorBusy,
            HandshakeError::BadRole => RefuseReason::BadRole,
        };
        Refuse { reason, version: PROTOCOL_VERSION }
    }
}

/// Vehicle-side endpoint admitting at most one operator at a time.
#[derive(Debug, Clone, Default)]
pub struct VehicleEndpoint {
    session: Option<SessionState>,
}

impl VehicleEndpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session(&self) -> Option<&SessionState> {
        self.session.as_ref()
    }

    pub fn session_mut(&mut self) -> Option<&mut SessionState> {
        self.session.as_mut()
    }

    /// Handles an operator's `Hello`. A lost session may be replaced by a new
    /// handshake; a live one may not.
    pub fn accept(&mut self, hello: &Hello, now: u64, mode: OperationMode) -> Result<Welcome, HandshakeError> {
        if hello.version != PROTOCOL_VERSION {
            return Err(HandshakeError::VersionMismatch { ours: PROTOCOL_VERSION, theirs: hello.version });
        }
        if hello.role != Role::Operator {
            return Err(HandshakeError::BadRole);
        }
        if self.session.is_some_and(|s| !s.is_lost()) {
            return Err(HandshakeError::OperatorBusy);
        }
        self.session = Some(SessionState::established(now, now));
        Ok(Welcome { version: PROTOCOL_VERSION, session_epoch: now, mode })
    }

    /// Called when the operator's transport closes. The session stays lost
    /// rather than vanishing so the vehicle keeps its Safe Halt.
    pub fn disconnect(&mut self) {
        if let Some(s) = &mut self.session {
            s.phase = LinkPhase::Lost;
        }
    }
}

/// Operator side of the handshake: the `Hello` to send, and the session
/// derived from the vehicle's reply.
pub fn operator_hello() -> Hello {
    Hello { version: PROTOCOL_VERSION, role: Role::Operator }
}

pub fn session_from_reply(reply: Result<&Welcome, &Refuse>, now: u64) -> Result<SessionState, HandshakeError> {
    match reply {
        Ok(w) if w.version == PROTOCOL_VERSION => Ok(SessionState::established(w.session_epoch, now)),
        Ok(w) => Err(HandshakeError::VersionMismatch { ours: PROTOCOL_VERSION, theirs: w.version }),
        Err(r) => Err(HandshakeError::from_refuse(r)),
    }
}

/// Drops any command whose seq is not newer than the last one applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LatestWins {
    last: Option<u32>,
}

impl LatestWins {
    pub fn last(&self) -> Option<u32> {
        self.last
    }

    pub fn accept(&mut self, seq: u32) -> bool {
        if self.last.is_some_and(|l| seq <= l) {
            return false;
        }
        self.last = Some(seq);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn steady_commands_stay_active() {
        let mut s = SessionState::established(0, 0);
        for t in (0..10_000).step_by(10) {
            if t % 50 == 0 {
                s.on_command(t);
            }
            assert!(heartbeat_supervise(&mut s, t, 400).is_none());
            assert_eq!(s.phase, LinkPhase::Active);
        }
    }

    #[test]
    fn silence_thresholds() {
        let mut s = SessionState::established(0, 0);
        s.on_command(1000);
        assert!(heartbeat_supervise(&mut s, 1200, 400).is_none());
        assert_eq!(s.phase, LinkPhase::Active);
        assert!(heartbeat_supervise(&mut s, 1250, 400).is_none());
        assert_eq!(s.phase, LinkPhase::Degraded);
        assert!(s.on_command(1260));
        assert_eq!(s.phase, LinkPhase::Active);
        assert!(heartbeat_supervise(&mut s, 1660, 400).is_none());
        let f = heartbeat_supervise(&mut s, 1710, 400).unwrap();
        assert_eq!(f.kind, FaultKind::LinkTimeout);
        assert_eq!(s.phase, LinkPhase::Lost);
        // lost is terminal: no second fault, no recovery
        assert!(heartbeat_supervise(&mut s, 5000, 400).is_none());
        assert!(!s.on_command(5000));
        assert_eq!(s.phase, LinkPhase::Lost);
    }

    #[test]
    fn connecting_is_not_supervised() {
        let mut s = SessionState::connecting();
        assert!(heartbeat_supervise(&mut s, 100_000, 400).is_none());
        assert_eq!(s.phase, LinkPhase::Connecting);
    }

    #[test]
    fn handshake_rules() {
        let mut ep = VehicleEndpoint::new();
        let w = ep.accept(&operator_hello(), 500, OperationMode::RemoteDriving).unwrap();
        assert_eq!(w.session_epoch, 500);
        let s = session_from_reply(Ok(&w), 510).unwrap();
        assert_eq!(s.phase, LinkPhase::Active);
        assert_eq!(s.epoch, 500);

        assert_eq!(ep.accept(&operator_hello(), 600, OperationMode::RemoteDriving), Err(HandshakeError::OperatorBusy));
        assert_eq!(ep.session().unwrap().epoch, 500, "first operator retained");

        let v2 = Hello { version: 2, role: Role::Operator };
        let e = ep.accept(&v2, 700, OperationMode::RemoteDriving).unwrap_err();
        assert_eq!(e, HandshakeError::VersionMismatch { ours: 1, theirs: 2 });
        assert_eq!(session_from_reply(Err(&e.to_refuse()), 0), Err(HandshakeError::VersionMismatch { ours: 1, theirs: 1 }));

        ep.disconnect();
        assert!(ep.session().unwrap().is_lost());
        assert!(ep.accept(&operator_hello(), 800, OperationMode::SafeHalt).is_ok());
    }

    #[test]
    fn operator_side_health() {
        let mut s = SessionState::established(0, 0);
        s.on_telemetry(100);
        assert_eq!(telemetry_health(&s, 300, 400), LinkPhase::Active);
        assert_eq!(telemetry_health(&s, 301, 400), LinkPhase::Degraded);
        assert_eq!(telemetry_health(&s, 501, 400), LinkPhase::Lost);
    }

    proptest! {
        #[test]
        fn latest_wins_is_monotone(seqs in prop::collection::vec(0u32..500, 0..300)) {
            let mut lw = LatestWins::default();
            let mut applied: Vec<u32> = Vec::new();
            for s in seqs {
                if lw.accept(s) {
                    applied.push(s);
                }
            }
            prop_assert!(applied.windows(2).all(|w| w[0] < w[1]));
        }

        /// Silence from t0 onwards is detected within timeout plus one
        /// supervision tick, whatever the command history before it.
        #[test]
        fn silence_detected_in_time(gaps in prop::collection::vec(1u64..150, 1..50), timeout in 100u64..1000) {
            let mut s = SessionState::established(0, 0);
            let mut rx = 0u64;
            let mut t = 0u64;
            for g in gaps {
                rx += g;
                while t < rx {
                    t += 10;
                    heartbeat_supervise(&mut s, t, timeout);
                }
                if !s.is_lost() {
                    s.on_command(rx);
                }
            }
            let t0 = rx;
            let mut lost_at = None;
            while t <= t0 + timeout + 10 {
                t += 10;
                if heartbeat_supervise(&mut s, t, timeout).is_some() || s.is_lost() {
                    lost_at.get_or_insert(t);
                }
            }
            prop_assert!(lost_at.is_some());
            prop_assert!(lost_at.unwrap() <= t0 + timeout + 10);
        }
    }
}
