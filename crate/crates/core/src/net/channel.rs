//! Simulated one-way link with fixed delay, uniform jitter, random loss and
//! scripted blackouts.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelProfile {
    pub base_delay_ms: u64,
    /// Uniform jitter in `[-jitter_ms, +jitter_ms]`, clamped so nothing is
    /// delivered before it is sent.
    #[serde(default)]
    pub jitter_ms: u64,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ChannelProfile {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("channel profile must be `delay,jitter,loss[,seed]` or a preset name, got {0:?}")]
    Syntax(String),
    #[error("loss_rate must be in [0, 1), got {0}")]
    LossRate(f64),
}

impl ChannelProfile {
    pub const fn ideal() -> Self {
        Self { base_delay_ms: 0, jitter_ms: 0, loss_rate: 0.0, seed: 0 }
    }

    /// Typical cellular link: 100 ms with some jitter and light loss.
    pub const fn cellular() -> Self {
        Self { base_delay_ms: 100, jitter_ms: 20, loss_rate: 0.01, seed: 0 }
    }

    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(ProfileError::LossRate(self.loss_rate));
        }
        Ok(())
    }
}

impl FromStr for ChannelProfile {
    type Err = ProfileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ideal" => return Ok(Self::ideal()),
            "cellular" => return Ok(Self::cellular()),
            _ => {}
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(3..=4).contains(&parts.len()) {
            return Err(ProfileError::Syntax(s.to_string()));
        }
        let bad = || ProfileError::Syntax(s.to_string());
        let p = Self {
            base_delay_ms: parts[0].parse().map_err(|_| bad())?,
            jitter_ms: parts[1].parse().map_err(|_| bad())?,
            loss_rate: parts[2].parse().map_err(|_| bad())?,
            seed: parts.get(3).map(|x| x.parse()).transpose().map_err(|_| bad())?.unwrap_or(0),
        };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for ChannelProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.base_delay_ms, self.jitter_ms, self.loss_rate, self.seed)
    }
}

/// Half-open window `[start_ms, end_ms)` during which nothing is delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blackout {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Blackout {
    pub fn contains(&self, t: u64) -> bool {
        (self.start_ms..self.end_ms).contains(&t)
    }
}

#[derive(Debug, Clone)]
struct InFlight<T> {
    deliver_at: u64,
    order: u64,
    item: T,
}

#[derive(Debug, Clone)]
pub struct Channel<T> {
    profile: ChannelProfile,
    blackouts: Vec<Blackout>,
    rng: ChaCha8Rng,
    queue: Vec<InFlight<T>>,
    next_order: u64,
    dropped: u64,
}

impl<T> Channel<T> {
    pub fn new(profile: ChannelProfile) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(profile.seed),
            profile,
            blackouts: Vec::new(),
            queue: Vec::new(),
            next_order: 0,
            dropped: 0,
        }
    }

    pub fn with_blackouts(mut self, blackouts: Vec<Blackout>) -> Self {
        self.blackouts = blackouts;
        self
    }

    pub fn profile(&self) -> &ChannelProfile {
        &self.profile
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Frames lost to the loss draw or a blackout so far.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn in_blackout(&self, t: u64) -> bool {
        self.blackouts.iter().any(|b| b.contains(t))
    }

    /// Enqueues a frame sent at `sent_at`. Returns its delivery time, or
    /// `None` when the loss draw drops it. Both draws are always taken so the
    /// random stream does not depend on the outcome.
    pub fn send(&mut self, sent_at: u64, item: T) -> Option<u64> {
        let loss_draw: f64 = self.rng.gen();
        let j = self.profile.jitter_ms as i64;
        let jitter = if j > 0 { self.rng.gen_range(-j..=j) } else { 0 };
        if loss_draw < self.profile.loss_rate {
            self.dropped += 1;
            return None;
        }
        let deliver_at = (sent_at as i64 + self.profile.base_delay_ms as i64 + jitter).max(sent_at as i64) as u64;
        self.queue.push(InFlight { deliver_at, order: self.next_order, item });
        self.next_order += 1;
        Some(deliver_at)
    }

    /// Removes and returns every frame due by `now`, ordered by delivery time
    /// then send order. Frames due inside a blackout are discarded.
    pub fn step(&mut self, now: u64) -> Vec<T> {
        let mut due = Vec::new();
        let mut i = 0;
        while i < self.queue.len() {
            if self.queue[i].deliver_at <= now {
                due.push(self.queue.swap_remove(i));
            } else {
                i += 1;
            }
        }
        due.sort_by_key(|f| (f.deliver_at, f.order));
        let mut out = Vec::with_capacity(due.len());
        for f in due {
            if self.in_blackout(f.deliver_at) {
                self.dropped += 1;
            } else {
                out.push(f.item);
            }
        }
        out
    }
}
