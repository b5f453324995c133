//! Run-length measurement of marks and gaps along the travelled distance.

use serde::{Deserialize, Serialize};

use super::WidthSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkKind {
    Mark,
    Gap,
}

/// When a width sample counts as "line present".
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresenceRule {
    /// Fraction of accepted rows needed. At 0.5 the line end is located at
    /// the raster centre, which keeps mark and gap lengths unbiased.
    pub min_confidence: f64,
    /// Consecutive disagreeing frames needed to switch state.
    pub hysteresis: usize,
}

impl Default for PresenceRule {
    fn default() -> Self {
        Self { min_confidence: 0.5, hysteresis: 2 }
    }
}

impl PresenceRule {
    pub fn present(&self, s: &WidthSample) -> bool {
        s.width.is_some() && s.confidence >= self.min_confidence
    }
}

/// Run-length encodes presence over distance. `odometry[i]` is the distance
/// travelled between frame `i - 1` and frame `i`. Frames held back by the
/// hysteresis are credited to the state they end up confirming.
pub fn measure_marks_and_gaps(samples: &[WidthSample], odometry: &[f64], rule: &PresenceRule) -> Vec<(MarkKind, f64)> {
    assert_eq!(samples.len(), odometry.len(), "one odometry entry per frame");
    let Some(first) = samples.first() else {
        return Vec::new();
    };
    let kind = |p: bool| if p { MarkKind::Mark } else { MarkKind::Gap };
    let mut state = rule.present(first);
    let mut run = 0.0;
    let mut pending: Vec<f64> = Vec::new();
    let mut out = Vec::new();
    for (s, &d) in samples.iter().zip(odometry) {
        if rule.present(s) == state {
            run += pending.drain(..).sum::<f64>() + d;
            continue;
        }
        pending.push(d);
        if pending.len() >= rule.hysteresis.max(1) {
            out.push((kind(state), run));
            state = !state;
            run = pending.drain(..).sum();
        }
    }
    run += pending.iter().sum::<f64>();
    out.push((kind(state), run));
    out
}
