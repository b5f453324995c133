//! Static mission geometry: the true marking, the guide line the machine
//! follows (surveyed, fitted or given), the rear-axle path and the paint plan.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::MissionError;
use crate::geometry::{fit_path_from_points, PathPolyline, Pose2D, Vec2};
use crate::net::SceneInfo;
use crate::perception::{
    render_ground, CameraSpec, ClassicalDetector, MarkingDetector, RenderOptions, Scene, TextureTile, MARKING_INTENSITY,
};
use crate::scenario::{pattern_intervals, GuidanceSource, PaintPattern, Pattern, Scenario};
use crate::vehicle::VehicleParams;

/// The point fit picks its own start; flip it so travel begins near `first`.
fn orient(path: PathPolyline, first: Vec2) -> Result<PathPolyline, MissionError> {
    if path.end().distance(first) < path.start().distance(first) {
        let mut v = path.vertices().to_vec();
        v.reverse();
        return Ok(PathPolyline::new(v)?);
    }
    Ok(path)
}

/// Straight extension added before the guide line so the machine can run up.
pub const LEAD_IN_M: f64 = 5.0;
/// Straight extension after the guide line so lookahead points stay defined.
pub const LEAD_OUT_M: f64 = 15.0;
/// The nozzle starts this far before the first guide-line point.
const START_BEFORE_LINE_M: f64 = 0.5;
/// Survey points are thinned to one per bin of this length.
const SURVEY_BIN_M: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct MissionSetup {
    pub params: VehicleParams,
    pub road: PathPolyline,
    /// Where the line really is (old marking, pre-marks or surveyed design).
    pub truth_line: PathPolyline,
    /// Line the machine believes in, extended at both ends.
    pub line: PathPolyline,
    /// Rear-axle reference path: the guide line shifted by the gun mount.
    pub tracked: PathPolyline,
    /// Arc-length intervals along `line` to paint.
    pub intervals: Vec<(f64, f64)>,
    /// Nozzle arc length along `line` at which the machine stops.
    pub s_stop: f64,
    pub start_pose: Pose2D,
    /// Ground scene before any paint is applied.
    pub scene: Scene,
    /// Marking polylines for display.
    pub markings: Vec<Vec<Vec2>>,
    /// Gun height giving the nominal width.
    pub nominal_height: f64,
    pub expected_line_width: f64,
}

impl MissionSetup {
    pub fn build(sc: &Scenario) -> Result<Self, MissionError> {
        let params = sc.vehicle;
        let road = sc.road_path()?;
        let lateral = match sc.guidance.source {
            GuidanceSource::Road => sc.guidance.lateral_offset,
            GuidanceSource::OldMarking => sc.old_marking.map_or(0.0, |m| m.lateral_offset),
            GuidanceSource::Premarking => sc.premarking.map_or(0.0, |p| p.lateral_offset),
            GuidanceSource::Gps => sc.gps.as_ref().map_or(0.0, |g| g.lateral_offset),
        };
        let truth_line = if lateral == 0.0 { road.clone() } else { road.offset(lateral)? };

        let texture = Arc::new(TextureTile::new(sc.seeds.texture));
        let mut scene = Scene::new(texture, sc.seeds.damage);
        let mut markings = Vec::new();
        if let Some(m) = &sc.old_marking {
            let path = if m.lateral_offset == lateral { truth_line.clone() } else { road.offset(m.lateral_offset)? };
            let end = m.end_s.unwrap_or(path.length()).min(path.length());
            let iv = pattern_intervals(m.pattern, m.mark_m, m.gap_m, m.start_s, end);
            scene.add_polyline(&path, m.width, &iv, m.damage, MARKING_INTENSITY);
            markings.extend(display_pieces(&path, &iv));
        }
        if let Some(p) = &sc.premarking {
            let path = if p.lateral_offset == lateral { truth_line.clone() } else { road.offset(p.lateral_offset)? };
            let iv = pattern_intervals(Pattern::Broken, p.dash_m, (p.spacing_m - p.dash_m).max(1e-3), 0.0, path.length());
            scene.add_polyline(&path, p.width, &iv, 0.0, MARKING_INTENSITY);
            markings.extend(display_pieces(&path, &iv));
        }

        let expected_line_width = match sc.guidance.source {
            GuidanceSource::OldMarking => sc.old_marking.map_or(sc.paint.nominal_width, |m| m.width),
            GuidanceSource::Premarking => sc.premarking.map_or(sc.paint.nominal_width, |p| p.width),
            _ => sc.paint.nominal_width,
        };
        let guide = match sc.guidance.source {
            GuidanceSource::Road => truth_line.clone(),
            GuidanceSource::OldMarking | GuidanceSource::Premarking => {
                let pts = survey(&scene, &truth_line, &params, expected_line_width, sc.guidance.survey_step_m);
                let fit = fit_path_from_points(&pts, sc.guidance.smoothing_m)
                    .map_err(|e| MissionError::Setup(format!("survey found no usable line: {e}")))?;
                orient(fit, pts[0])?
            }
            GuidanceSource::Gps => {
                let gps = sc.gps.as_ref().expect("validated");
                let pts = gps_points(gps, &truth_line, sc.seeds.gps)?;
                orient(fit_path_from_points(&pts, sc.guidance.smoothing_m)?, pts[0])?
            }
        };
        let line = extend(&guide, LEAD_IN_M, LEAD_OUT_M)?;
        let (gx, gy) = params.gun_mount;
        let tracked = line.offset(-gy)?;

        let truth_len = truth_line.length();
        let truth_iv = match sc.paint.pattern {
            PaintPattern::None => Vec::new(),
            PaintPattern::FollowOld => {
                let m = sc.old_marking.expect("validated");
                let end = m.end_s.unwrap_or(truth_len).min(truth_len);
                pattern_intervals(m.pattern, m.mark_m, m.gap_m, m.start_s, end)
            }
            PaintPattern::Solid | PaintPattern::Broken => {
                let pattern = if sc.paint.pattern == PaintPattern::Solid { Pattern::Solid } else { Pattern::Broken };
                let end = sc.paint.end_s.unwrap_or(truth_len).min(truth_len);
                pattern_intervals(pattern, sc.paint.mark_m, sc.paint.gap_m, sc.paint.start_s, end)
            }
        };
        let to_line = |s: f64| {
            let (p, _) = truth_line.sample_clamped(s);
            line.project(p.position(), p.heading).s
        };
        let intervals: Vec<(f64, f64)> = truth_iv.iter().map(|&(a, b)| (to_line(a), to_line(b))).collect();
        let s_stop = to_line(truth_len) - sc.mission.end_margin_m;

        let nominal_height = params
            .width_model()
            .height_for_width(sc.paint.nominal_width)
            .map_err(|e| MissionError::Setup(e.to_string()))?;

        let (p0, _) = tracked.sample_clamped(LEAD_IN_M - START_BEFORE_LINE_M - gx);
        let [fwd, left, dh] = sc.mission.start_offset;
        let c = p0.transform_point(Vec2::new(fwd, left));
        let start_pose = Pose2D::new(c.x, c.y, p0.heading + dh);

        Ok(Self {
            params,
            road,
            truth_line,
            line,
            tracked,
            intervals,
            s_stop,
            start_pose,
            scene,
            markings,
            nominal_height,
            expected_line_width,
        })
    }

    pub fn in_paint_interval(&self, s: f64) -> bool {
        self.intervals.iter().any(|&(a, b)| s >= a && s < b)
    }

    /// Nozzle speed target: operating speed, braking to stop at `s_stop`.
    pub fn speed_profile(&self, s_gun: f64, speed: f64, decel: f64) -> f64 {
        let remaining = self.s_stop - s_gun;
        if remaining < 0.05 {
            0.0
        } else {
            speed.min((2.0 * decel * remaining).sqrt())
        }
    }

    pub fn scene_info(&self) -> SceneInfo {
        SceneInfo {
            path: self.line.resample(0.5).vertices().to_vec(),
            markings: self.markings.clone(),
            max_steer: self.params.max_steer,
            wheelbase: self.params.wheelbase,
            gun_mount: Vec2::from(self.params.gun_mount),
            max_speed: self.params.max_speed,
        }
    }
}

/// Deceleration used by the stopping profile.
pub const PROFILE_DECEL: f64 = 1.0;

fn display_pieces(path: &PathPolyline, intervals: &[(f64, f64)]) -> Vec<Vec<Vec2>> {
    intervals
        .iter()
        .map(|&(a, b)| {
            let n = ((b - a) / 0.5).ceil().max(1.0) as usize;
            (0..=n).map(|k| path.sample_clamped(a + (b - a) * k as f64 / n as f64).0.position()).collect()
        })
        .collect()
}

/// Drives a virtual survey pass along the true line with the nozzle over it
/// and collects the detected centreline in world coordinates.
fn survey(scene: &Scene, truth: &PathPolyline, params: &VehicleParams, width: f64, step: f64) -> Vec<Vec2> {
    let spec = CameraSpec::forward(params);
    let detector = ClassicalDetector::new(width);
    let (gx, gy) = params.gun_mount;
    let n = (truth.length() / step).ceil() as usize;
    let mut out = Vec::new();
    for k in 0..=n {
        let (lp, _) = truth.sample_clamped(k as f64 * step);
        let rear = lp.position() - Vec2::new(gx, gy).rotate(lp.heading);
        let pose = Pose2D::new(rear.x, rear.y, lp.heading);
        let raster = render_ground(scene, &spec.pose_for(&pose), &spec, 0.0, &RenderOptions::default());
        let det = detector.detect(&raster);
        // thin to one averaged point per bin along the body x axis
        let mut bin: Option<(i64, Vec2, usize)> = None;
        for p in det.centerline_points {
            let b = (p.x / SURVEY_BIN_M).floor() as i64;
            match &mut bin {
                Some((cur, acc, cnt)) if *cur == b => {
                    *acc = *acc + p;
                    *cnt += 1;
                }
                _ => {
                    if let Some((_, acc, cnt)) = bin.take() {
                        out.push(pose.transform_point(acc * (1.0 / cnt as f64)));
                    }
                    bin = Some((b, p, 1));
                }
            }
        }
        if let Some((_, acc, cnt)) = bin {
            out.push(pose.transform_point(acc * (1.0 / cnt as f64)));
        }
    }
    out
}

fn gps_points(gps: &crate::scenario::GpsSpec, truth: &PathPolyline, seed: u64) -> Result<Vec<Vec2>, MissionError> {
    if !gps.points.is_empty() {
        return Ok(gps.points.iter().map(|p| Vec2::new(p[0], p[1])).collect());
    }
    let spacing = gps.spacing_m.expect("validated");
    let noise = Normal::new(0.0, gps.noise_sigma.max(0.0)).map_err(|e| MissionError::Setup(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (truth.length() / spacing).round().max(1.0) as usize;
    Ok((0..=n)
        .map(|k| {
            let p = truth.sample_clamped(truth.length() * k as f64 / n as f64).0.position();
            Vec2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
        })
        .collect())
}

/// Adds straight lead-in and lead-out pieces along the end tangents.
fn extend(path: &PathPolyline, before: f64, after: f64) -> Result<PathPolyline, MissionError> {
    let len = path.length();
    let probe = len.min(1.0);
    let (start, end) = (path.start(), path.end());
    let t0 = (path.sample_clamped(probe).0.position() - start).normalized();
    let t1 = (end - path.sample_clamped(len - probe).0.position()).normalized();
    let mut pts = vec![start - t0 * before];
    pts.extend_from_slice(path.vertices());
    pts.push(end + t1 * after);
    Ok(PathPolyline::new(pts)?.resample(0.1))
}
