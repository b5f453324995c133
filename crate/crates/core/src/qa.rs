//! Mission log (append-only JSON lines), width QA verdicts and CSV export.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modes::{FaultEvent, FaultKind, OperationMode, RejectReason, RequestSource, SafeHaltPhase};
use crate::net::{CameraId, CommandFrame};
use crate::perception::{MarkKind, VelocityEstimate, WidthSample};
use crate::vehicle::{PaintSegment, VehicleState};

pub const LOG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("timestamp regression: {got} s after {last} s")]
    Regression { last: f64, got: f64 },
    #[error("log I/O: {0}")]
    Io(#[from] io::Error),
    #[error("log line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionStart {
    pub log_version: u32,
    pub mission_id: String,
    pub scenario_ref: String,
    /// Fully resolved scenario (overrides applied), enough to re-run it.
    pub scenario_toml: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// Reached the end of the path and stopped.
    Completed,
    /// Safe Halt reached the secured phase.
    Secured,
    /// Scenario duration elapsed.
    Timeout,
    /// Replay reached the end of the recorded log.
    LogExhausted,
    /// The serving process shut down first.
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionEnd {
    pub reason: EndReason,
    pub final_state: VehicleState,
    pub paint_segments: usize,
    pub paint_area: f64,
    pub paint_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum MissionEvent {
    MissionStart(MissionStart),
    SessionStart {
        epoch_ms: u64,
    },
    CommandRx {
        frame: CommandFrame,
        /// False when dropped by latest-wins or a lost session.
        applied: bool,
    },
    ModeTransition {
        from: OperationMode,
        to: OperationMode,
        source: RequestSource,
        cause: Option<FaultKind>,
    },
    Rejection {
        current: OperationMode,
        target: OperationMode,
        reason: RejectReason,
    },
    Fault {
        fault: FaultEvent,
        entered_safe_halt: bool,
    },
    SafeHaltPhase {
        phase: SafeHaltPhase,
    },
    /// Cumulative distance travelled by the rear axle.
    Odometry {
        distance: f64,
        speed: f64,
    },
    WidthSample {
        sample: WidthSample,
        /// Whether fresh paint lies under the camera centre.
        painted: bool,
    },
    VelocityEstimate {
        estimate: VelocityEstimate,
        true_speed: f64,
    },
    PaintSegment(PaintSegment),
    SensorGap {
        camera: CameraId,
        distance: f64,
    },
    MarkGap {
        mark: MarkKind,
        length: f64,
    },
    MissionEnd(MissionEnd),
}

impl MissionEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            MissionEvent::MissionStart(_) => "mission_start",
            MissionEvent::SessionStart { .. } => "session_start",
            MissionEvent::CommandRx { .. } => "command_rx",
            MissionEvent::ModeTransition { .. } => "mode_transition",
            MissionEvent::Rejection { .. } => "rejection",
            MissionEvent::Fault { .. } => "fault",
            MissionEvent::SafeHaltPhase { .. } => "safe_halt_phase",
            MissionEvent::Odometry { .. } => "odometry",
            MissionEvent::WidthSample { .. } => "width_sample",
            MissionEvent::VelocityEstimate { .. } => "velocity_estimate",
            MissionEvent::PaintSegment(_) => "paint_segment",
            MissionEvent::SensorGap { .. } => "sensor_gap",
            MissionEvent::MarkGap { .. } => "mark_gap",
            MissionEvent::MissionEnd(_) => "mission_end",
        }
    }
}

/// One log line: `{"t": seconds, "kind": ..., "payload": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub t: f64,
    #[serde(flatten)]
    pub event: MissionEvent,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

/// Append-only mission log, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct MissionLog {
    records: Vec<LogRecord>,
    sink: Option<BufWriter<File>>,
}

impl MissionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self, LogError> {
        Ok(Self { records: Vec::new(), sink: Some(BufWriter::new(File::create(path)?)) })
    }

    pub fn append(&mut self, t: f64, event: MissionEvent) -> Result<(), LogError> {
        if let Some(last) = self.records.last() {
            if t < last.t || t.is_nan() {
                return Err(LogError::Regression { last: last.t, got: t });
            }
        }
        let rec = LogRecord { t, event };
        if let Some(sink) = &mut self.sink {
            writeln!(sink, "{}", rec.to_line())?;
        }
        self.records.push(rec);
        Ok(())
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.records.iter().filter(|r| r.event.kind() == kind).count()
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        if let Some(sink) = &mut self.sink {
            sink.flush()?;
        }
        Ok(())
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRecord>, LogError> {
    parse_log(BufReader::new(File::open(path)?))
}

pub fn parse_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LogRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn records_to_jsonl(records: &[LogRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&r.to_line());
        s.push('\n');
    }
    s
}

/// 64-bit FNV-1a over the exact bits of every segment field.
pub fn paint_digest(segments: &[PaintSegment]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for b in bytes {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for s in segments {
        for v in [s.start.x, s.start.y, s.end.x, s.end.y, s.width, s.t_start, s.t_end] {
            eat(&v.to_bits().to_le_bytes());
        }
        eat(&s.mark_id.to_le_bytes());
    }
    format!("{h:016x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfSpecSpan {
    pub s_start: f64,
    pub s_end: f64,
    /// Mean of the widths measured in the span; absent when no frame in it
    /// produced a width.
    pub measured_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaVerdict {
    pub nominal_width: f64,
    pub tolerance: f64,
    /// In-spec painted length over painted length; absent without painted
    /// width samples.
    pub pass_fraction: Option<f64>,
    pub painted_length: f64,
    pub out_of_spec_spans: Vec<OutOfSpecSpan>,
}

impl QaVerdict {
    pub fn passes(&self, threshold: f64) -> bool {
        self.pass_fraction.is_some_and(|p| p >= threshold)
    }
}

/// A width sample placed on the travelled distance axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedSample {
    pub t: f64,
    pub s: f64,
    /// Distance covered since the previous frame.
    pub cell: f64,
    pub sample: WidthSample,
    pub painted: bool,
}

/// Joins width samples to distance through the odometry records. Input
/// order does not matter; samples come back sorted by time.
pub fn place_width_samples(records: &[LogRecord]) -> Vec<PlacedSample> {
    let mut odo: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| match r.event {
            MissionEvent::Odometry { distance, .. } => Some((r.t, distance)),
            _ => None,
        })
        .collect();
    odo.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut samples: Vec<(f64, WidthSample, bool)> = records
        .iter()
        .filter_map(|r| match r.event {
            MissionEvent::WidthSample { sample, painted } => Some((r.t, sample, painted)),
            _ => None,
        })
        .collect();
    samples.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.frame_index.cmp(&b.1.frame_index)));

    let distance_at = |t: f64| -> f64 {
        if odo.is_empty() {
            return 0.0;
        }
        let i = odo.partition_point(|p| p.0 <= t);
        if i == 0 {
            return odo[0].1;
        }
        if i == odo.len() {
            return odo[i - 1].1;
        }
        let (a, b) = (odo[i - 1], odo[i]);
        if b.0 > a.0 {
            a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
        } else {
            a.1
        }
    };
    let s: Vec<f64> = samples.iter().map(|x| distance_at(x.0)).collect();
    samples
        .iter()
        .enumerate()
        .map(|(i, &(t, sample, painted))| {
            let cell = if i > 0 {
                s[i] - s[i - 1]
            } else if s.len() > 1 {
                s[1] - s[0]
            } else {
                0.0
            };
            PlacedSample { t, s: s[i], cell, sample, painted }
        })
        .collect()
}

/// QA verdict over the painted part of a mission.
pub fn evaluate_mission(records: &[LogRecord], nominal_width: f64, tolerance: f64) -> QaVerdict {
    let placed = place_width_samples(records);
    let mut painted_length = 0.0;
    let mut in_spec = 0.0;
    let mut spans = Vec::new();
    let mut open: Option<(f64, f64, f64, usize)> = None; // start, end, width sum, width count
    let close = |open: &mut Option<(f64, f64, f64, usize)>, spans: &mut Vec<OutOfSpecSpan>| {
        if let Some((a, b, sum, n)) = open.take() {
            spans.push(OutOfSpecSpan { s_start: a, s_end: b, measured_width: (n > 0).then(|| sum / n as f64) });
        }
    };
    let mut any_painted = false;
    for p in &placed {
        if !p.painted {
            close(&mut open, &mut spans);
            continue;
        }
        any_painted = true;
        painted_length += p.cell;
        let ok = p.sample.width.is_some_and(|w| (w - nominal_width).abs() <= tolerance);
        if ok {
            in_spec += p.cell;
            close(&mut open, &mut spans);
            continue;
        }
        let (w, n) = p.sample.width.map_or((0.0, 0), |w| (w, 1));
        match &mut open {
            Some(span) => {
                span.1 = p.s;
                span.2 += w;
                span.3 += n;
            }
            None => open = Some((p.s - p.cell, p.s, w, n)),
        }
    }
    close(&mut open, &mut spans);
    let pass_fraction = if !any_painted {
        None
    } else if painted_length > 0.0 {
        Some(in_spec / painted_length)
    } else {
        Some(if spans.is_empty() { 1.0 } else { 0.0 })
    };
    QaVerdict { nominal_width, tolerance, pass_fraction, painted_length, out_of_spec_spans: spans }
}

/// `(s, width)` series for plotting, one row per width sample.
pub fn export_width_csv(records: &[LogRecord]) -> String {
    let mut out = String::from("t,s,width,confidence,painted,frame_index\n");
    for p in place_width_samples(records) {
        let w = p.sample.width.map(|w| w.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{},{}\n", p.t, p.s, w, p.sample.confidence, p.painted as u8, p.sample.frame_index));
    }
    out
}

/// Mode timeline `(t, mode)` starting from `initial`.
pub fn mode_timeline(records: &[LogRecord], initial: OperationMode) -> Vec<(f64, OperationMode)> {
    let mut out = vec![(records.first().map_or(0.0, |r| r.t), initial)];
    for r in records {
        if let MissionEvent::ModeTransition { to, .. } = r.event {
            out.push((r.t, to));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn width_rec(t: f64, i: u64, w: Option<f64>, painted: bool) -> LogRecord {
        LogRecord {
            t,
            event: MissionEvent::WidthSample { sample: WidthSample { frame_index: i, width: w, confidence: 0.9, timestamp: t }, painted },
        }
    }

    fn odo_rec(t: f64, d: f64) -> LogRecord {
        LogRecord { t, event: MissionEvent::Odometry { distance: d, speed: 2.0 } }
    }

    /// 20 m at 0.1 m per frame with widths chosen per distance.
    fn synthetic(width_at: impl Fn(f64) -> Option<f64>) -> Vec<LogRecord> {
        let mut recs = Vec::new();
        for i in 0..=200u64 {
            let t = i as f64 * 0.05;
            let d = i as f64 * 0.1;
            recs.push(odo_rec(t, d));
            recs.push(width_rec(t, i, width_at(d), true));
        }
        recs
    }

    #[test]
    fn append_writes_lines_and_rejects_regression() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let mut log = MissionLog::create(&path).unwrap();
        log.append(0.0, MissionEvent::SessionStart { epoch_ms: 0 }).unwrap();
        log.flush().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
        for i in 1..1000 {
            log.append(i as f64 * 0.01, MissionEvent::Odometry { distance: i as f64, speed: 1.0 }).unwrap();
        }
        assert!(matches!(log.append(0.5, MissionEvent::SessionStart { epoch_ms: 0 }), Err(LogError::Regression { .. })));
        log.flush().unwrap();
        let back = read_log(&path).unwrap();
        assert_eq!(back.len(), 1000);
        assert_eq!(back, log.records());
        assert!(back.windows(2).all(|w| w[0].t <= w[1].t));
    }

    #[test]
    fn record_line_shape() {
        let rec = LogRecord { t: 1.25, event: MissionEvent::Odometry { distance: 3.0, speed: 2.0 } };
        let v: serde_json::Value = serde_json::from_str(&rec.to_line()).unwrap();
        assert_eq!(v["t"], 1.25);
        assert_eq!(v["kind"], "odometry");
        assert_eq!(v["payload"]["distance"], 3.0);
        let back: LogRecord = serde_json::from_str(&rec.to_line()).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn all_nominal_passes() {
        let v = evaluate_mission(&synthetic(|_| Some(0.12)), 0.12, 0.01);
        assert_eq!(v.pass_fraction, Some(1.0));
        assert!(v.out_of_spec_spans.is_empty());
        // 201 frames, each covering one 0.1 m cell
        assert!((v.painted_length - 20.1).abs() < 1e-9);
    }

    #[test]
    fn one_over_width_stretch() {
        let recs = synthetic(|d| Some(if (8.0..10.0).contains(&d) { 0.15 } else { 0.12 }));
        let v = evaluate_mission(&recs, 0.12, 0.01);
        assert_eq!(v.out_of_spec_spans.len(), 1);
        let sp = &v.out_of_spec_spans[0];
        assert!((sp.s_end - sp.s_start - 2.0).abs() <= 0.1 + 1e-9, "{sp:?}");
        assert!((sp.measured_width.unwrap() - 0.15).abs() < 1e-12);
        assert!((v.pass_fraction.unwrap() - 0.9).abs() <= 0.01);
    }

    #[test]
    fn nothing_painted_is_absent() {
        let recs: Vec<_> = (0..10).flat_map(|i| [odo_rec(i as f64, i as f64), width_rec(i as f64, i, None, false)]).collect();
        assert_eq!(evaluate_mission(&recs, 0.12, 0.01).pass_fraction, None);
        assert_eq!(evaluate_mission(&[], 0.12, 0.01).pass_fraction, None);
    }

    #[test]
    fn csv_export() {
        let csv = export_width_csv(&synthetic(|_| Some(0.12)));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,s,width,confidence,painted,frame_index");
        assert_eq!(lines.len(), 202);
        assert_eq!(lines[2], "0.05,0.1,0.12,0.9,1,1");
    }

    #[test]
    fn digest_tracks_bits() {
        let seg = PaintSegment { start: crate::Vec2::new(0.0, 0.0), end: crate::Vec2::new(0.03, 0.0), width: 0.12, t_start: 0.0, t_end: 0.01, mark_id: 1 };
        let mut other = seg;
        other.end.x = f64::from_bits(seg.end.x.to_bits() + 1);
        assert_eq!(paint_digest(&[seg]), paint_digest(&[seg]));
        assert_ne!(paint_digest(&[seg]), paint_digest(&[other]));
    }

    proptest! {
        #[test]
        fn evaluation_is_order_independent(widths in prop::collection::vec(0.10f64..0.14, 5..60), seed in any::<u64>()) {
            let mut recs = Vec::new();
            for (i, w) in widths.iter().enumerate() {
                recs.push(odo_rec(i as f64 * 0.05, i as f64 * 0.2));
                recs.push(width_rec(i as f64 * 0.05, i as u64, Some(*w), i % 7 != 3));
            }
            let a = evaluate_mission(&recs, 0.12, 0.01);
            let mut shuffled = recs.clone();
            let n = shuffled.len();
            let mut x = seed | 1;
            for i in (1..n).rev() {
                x ^= x << 13; x ^= x >> 7; x ^= x << 17;
                shuffled.swap(i, (x % (i as u64 + 1)) as usize);
            }
            let b = evaluate_mission(&shuffled, 0.12, 0.01);
            prop_assert_eq!(a.clone(), b);
            let span_len: f64 = a.out_of_spec_spans.iter().map(|s| s.s_end - s.s_start).sum();
            if let Some(p) = a.pass_fraction {
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!((1.0 - p) * a.painted_length <= span_len + 1e-9);
            }
        }
    }
}
