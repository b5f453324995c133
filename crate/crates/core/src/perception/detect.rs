//! Marking detection on the forward patch and spray-gun offset estimation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{CameraSpec, GroundRaster};
use crate::geometry::Vec2;
use crate::vehicle::VehicleParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkingDetection {
    /// Centreline points in the vehicle body frame, nearest first.
    pub centerline_points: Vec<Vec2>,
    pub quality: f64,
}

impl MarkingDetection {
    pub fn is_empty(&self) -> bool {
        self.centerline_points.is_empty()
    }
}

/// Seam for swapping the detection method.
pub trait MarkingDetector {
    fn detect(&self, raster: &GroundRaster) -> MarkingDetection;
}

/// Adaptive threshold, morphological close and connected components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalDetector {
    pub expected_width: f64,
    /// Threshold block size relative to the expected width.
    pub block_factor: f64,
    /// Intensity above the local block mean for a pixel to count as marking.
    pub offset: f32,
    /// Minimum row span of the kept component, relative to the raster.
    pub min_row_fraction: f64,
}

impl ClassicalDetector {
    pub fn new(expected_width: f64) -> Self {
        Self {
            expected_width,
            block_factor: 2.5,
            offset: 0.12,
            min_row_fraction: 0.25,
        }
    }
}

struct Component {
    min_row: usize,
    max_row: usize,
    area: usize,
    raw: usize,
    row_sum: Vec<(f64, usize)>,
}

impl MarkingDetector for ClassicalDetector {
    fn detect(&self, raster: &GroundRaster) -> MarkingDetection {
        let (rows, cols) = (raster.rows(), raster.cols());
        let gsd = raster.gsd();
        let expected_px = (self.expected_width / gsd).max(1.0);
        let block = ((self.block_factor * expected_px).round() as usize).max(15) | 1;
        let raw = adaptive_threshold(raster, block, self.offset);
        let k = ((0.2 * expected_px).round() as usize).clamp(3, 15) | 1;
        let closed = erode(&dilate(&raw, rows, cols, k), rows, cols, k);

        let mut label = vec![u32::MAX; rows * cols];
        let mut best: Option<Component> = None;
        let mut queue = VecDeque::new();
        let mut pixels: Vec<usize> = Vec::new();
        let mut next = 0u32;
        for start in 0..rows * cols {
            if !closed[start] || label[start] != u32::MAX {
                continue;
            }
            let (mut min_row, mut max_row, mut raw_count) = (usize::MAX, 0, 0);
            pixels.clear();
            label[start] = next;
            queue.push_back(start);
            while let Some(i) = queue.pop_front() {
                let (r, c) = (i / cols, i % cols);
                min_row = min_row.min(r);
                max_row = max_row.max(r);
                raw_count += raw[i] as usize;
                pixels.push(i);
                for dr in -1isize..=1 {
                    for dc in -1isize..=1 {
                        let (nr, nc) = (r as isize + dr, c as isize + dc);
                        if nr < 0 || nc < 0 || nr >= rows as isize || nc >= cols as isize {
                            continue;
                        }
                        let j = nr as usize * cols + nc as usize;
                        if closed[j] && label[j] == u32::MAX {
                            label[j] = next;
                            queue.push_back(j);
                        }
                    }
                }
            }
            next += 1;
            let span = max_row - min_row;
            let better = match &best {
                None => true,
                Some(b) => {
                    let bs = b.max_row - b.min_row;
                    span > bs || (span == bs && pixels.len() > b.area)
                }
            };
            if better {
                let mut row_sum = vec![(0.0, 0); rows];
                for &i in &pixels {
                    row_sum[i / cols].0 += (i % cols) as f64;
                    row_sum[i / cols].1 += 1;
                }
                best = Some(Component { min_row, max_row, area: pixels.len(), raw: raw_count, row_sum });
            }
        }

        let Some(comp) = best else {
            return MarkingDetection::default();
        };
        let span = comp.max_row - comp.min_row + 1;
        if (span as f64) < self.min_row_fraction * rows as f64 || (comp.area as f64) < 0.2 * expected_px * span as f64 {
            return MarkingDetection::default();
        }
        let mut points: Vec<Vec2> = (0..rows)
            .rev()
            .filter(|&r| comp.row_sum[r].1 > 0)
            .map(|r| {
                let col = comp.row_sum[r].0 / comp.row_sum[r].1 as f64;
                raster.spec.mount + raster.spec.pixel_local(r as f64, col)
            })
            .collect();
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        MarkingDetection {
            centerline_points: points,
            quality: (comp.raw as f64 / (expected_px * rows as f64)).min(1.0),
        }
    }
}

fn adaptive_threshold(raster: &GroundRaster, block: usize, offset: f32) -> Vec<bool> {
    let (rows, cols) = (raster.rows(), raster.cols());
    let w = cols + 1;
    let mut s = vec![0.0f64; w * (rows + 1)];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += raster.get(r, c) as f64;
            s[(r + 1) * w + c + 1] = s[r * w + c + 1] + acc;
        }
    }
    let half = block / 2;
    let mut out = vec![false; rows * cols];
    for r in 0..rows {
        let (r0, r1) = (r.saturating_sub(half), (r + half + 1).min(rows));
        for c in 0..cols {
            let (c0, c1) = (c.saturating_sub(half), (c + half + 1).min(cols));
            let sum = s[r1 * w + c1] - s[r0 * w + c1] - s[r1 * w + c0] + s[r0 * w + c0];
            let mean = sum / ((r1 - r0) * (c1 - c0)) as f64;
            out[r * cols + c] = raster.get(r, c) > mean as f32 + offset;
        }
    }
    out
}

/// Separable binary morphology with a `k`-wide line element; pixels
/// outside the raster are ignored.
fn morph(src: &[bool], rows: usize, cols: usize, k: usize, dilate: bool) -> Vec<bool> {
    let half = k / 2;
    let pass = |src: &[bool], horizontal: bool| {
        let (lines, len) = if horizontal { (rows, cols) } else { (cols, rows) };
        let idx = |line: usize, i: usize| if horizontal { line * cols + i } else { i * cols + line };
        let mut out = vec![!dilate; rows * cols];
        let mut prefix = vec![0u32; len + 1];
        for line in 0..lines {
            for i in 0..len {
                prefix[i + 1] = prefix[i] + (src[idx(line, i)] == dilate) as u32;
            }
            for i in 0..len {
                let (lo, hi) = (i.saturating_sub(half), (i + half + 1).min(len));
                if prefix[hi] > prefix[lo] {
                    out[idx(line, i)] = dilate;
                }
            }
        }
        out
    };
    pass(&pass(src, true), false)
}

fn dilate(src: &[bool], rows: usize, cols: usize, k: usize) -> Vec<bool> {
    morph(src, rows, cols, k, true)
}

fn erode(src: &[bool], rows: usize, cols: usize, k: usize) -> Vec<bool> {
    morph(src, rows, cols, k, false)
}

/// Where the nozzle appears in the forward raster when the gun is centred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GunCalibration {
    pub reference_col: f64,
    /// May lie beyond the last raster row.
    pub gun_row: f64,
}

impl GunCalibration {
    pub fn for_camera(spec: &CameraSpec, params: &VehicleParams) -> Self {
        let (gx, gy) = params.gun_mount;
        let (row, col) = spec.local_pixel(Vec2::new(gx, gy) - spec.mount);
        Self { reference_col: col, gun_row: row }
    }
}

/// Lateral offset of the neutral nozzle from the detected line at the gun's
/// row. Positive when the nozzle sits left of the line.
pub fn gun_offset_from_detection(det: &MarkingDetection, spec: &CameraSpec, calib: &GunCalibration) -> Option<f64> {
    if det.quality < 0.2 || det.centerline_points.len() < 3 {
        return None;
    }
    // quadratic fit of column against row, extrapolated to the gun row
    let pts: Vec<(f64, f64)> = det
        .centerline_points
        .iter()
        .map(|p| spec.local_pixel(*p - spec.mount))
        .collect();
    let n = pts.len() as f64;
    let mid = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let half = (spec.rows as f64 / 2.0).max(1.0);
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(r, c) in &pts {
        let u = (r - mid) / half;
        let basis = [1.0, u, u * u];
        for i in 0..3 {
            for j in 0..3 {
                ata[i][j] += basis[i] * basis[j];
            }
            atb[i] += basis[i] * c;
        }
    }
    let coef = solve3(ata, atb)?;
    let u = (calib.gun_row - mid) / half;
    let col = coef[0] + coef[1] * u + coef[2] * u * u;
    Some((col - calib.reference_col) * spec.gsd)
}

/// Detects the tracking line and returns the nozzle offset from it.
pub fn estimate_gun_offset(
    raster: &GroundRaster,
    detector: &dyn MarkingDetector,
    calib: &GunCalibration,
) -> Option<f64> {
    gun_offset_from_detection(&detector.detect(raster), &raster.spec, calib)
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in 0..3 {
                    a[row][k] -= f * a[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

#[cfg(test)]
mod tests {
    use super::super::render::tests::tile;
    use super::super::{render_ground, RenderOptions, Scene, Stroke, MARKING_INTENSITY};
    use super::*;
    use crate::geometry::{build_path, PathPiece, Pose2D};

    fn forward() -> CameraSpec {
        CameraSpec::forward(&VehicleParams::default())
    }

    /// Vehicle at the origin heading +x; the marking runs along y = `line_y`.
    fn patch(line_y: f64, width: f64, damage: f64) -> GroundRaster {
        let mut scene = Scene::new(tile(), 5);
        if width > 0.0 {
            scene.add_stroke(Stroke { a: Vec2::new(-5.0, line_y), b: Vec2::new(10.0, line_y), half_width: width / 2.0, damage, intensity: MARKING_INTENSITY });
        }
        let spec = forward();
        render_ground(&scene, &spec.pose_for(&Pose2D::default()), &spec, 0.0, &RenderOptions::default())
    }

    fn rms_lateral(det: &MarkingDetection, truth: impl Fn(f64) -> f64) -> f64 {
        let n = det.centerline_points.len() as f64;
        (det.centerline_points.iter().map(|p| (p.y - truth(p.x)).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn clean_marking_centerline() {
        let det = ClassicalDetector::new(0.12).detect(&patch(-0.77, 0.12, 0.0));
        assert!(!det.is_empty());
        assert!(rms_lateral(&det, |_| -0.77) < 0.01);
        assert!(det.centerline_points.windows(2).all(|w| w[0].x <= w[1].x));
        assert!(det.quality > 0.9, "{}", det.quality);
    }

    #[test]
    fn damaged_marking_centerline() {
        let clean = ClassicalDetector::new(0.12).detect(&patch(-0.8, 0.12, 0.0));
        let det = ClassicalDetector::new(0.12).detect(&patch(-0.8, 0.12, 0.5));
        assert!(!det.is_empty());
        assert!(rms_lateral(&det, |_| -0.8) < 0.03);
        assert!(det.quality < clean.quality);
    }

    #[test]
    fn curved_marking_centerline() {
        let r = 30.0;
        let path = build_path(Pose2D::new(-2.0, -0.8, 0.0), &[PathPiece::Straight { length: 2.0 }, PathPiece::Arc { radius: r, angle_deg: 10.0 }], 0.05).unwrap();
        let mut scene = Scene::new(tile(), 5);
        scene.add_polyline(&path, 0.12, &[(0.0, path.length())], 0.0, MARKING_INTENSITY);
        let spec = forward();
        let raster = render_ground(&scene, &spec.pose_for(&Pose2D::default()), &spec, 0.0, &RenderOptions::default());
        let det = ClassicalDetector::new(0.12).detect(&raster);
        let centre = Vec2::new(0.0, -0.8 + r);
        let err = (det.centerline_points.iter().map(|p| (r - p.distance(centre)).powi(2)).sum::<f64>() / det.centerline_points.len() as f64).sqrt();
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn blank_asphalt_is_empty() {
        let det = ClassicalDetector::new(0.12).detect(&patch(0.0, 0.0, 0.0));
        assert!(det.is_empty());
        assert_eq!(det.quality, 0.0);
    }

    #[test]
    fn gun_offset_sign_and_scale() {
        let p = VehicleParams::default();
        let spec = forward();
        let calib = GunCalibration::for_camera(&spec, &p);
        let det = ClassicalDetector::new(0.12);
        let centred = estimate_gun_offset(&patch(p.gun_mount.1, 0.12, 0.0), &det, &calib).unwrap();
        assert!(centred.abs() < 0.002, "{centred}");
        // 25 px to the right of the nozzle: nozzle is left of the line
        let right = estimate_gun_offset(&patch(p.gun_mount.1 - 25.0 * spec.gsd, 0.12, 0.0), &det, &calib).unwrap();
        assert!((right - 0.05).abs() < 0.002, "{right}");
        let left = estimate_gun_offset(&patch(p.gun_mount.1 + 25.0 * spec.gsd, 0.12, 0.0), &det, &calib).unwrap();
        assert!((left + 0.05).abs() < 0.002, "{left}");
        assert!(estimate_gun_offset(&patch(0.0, 0.0, 0.0), &det, &calib).is_none());
    }

    #[test]
    fn extrapolates_curved_line_to_gun_row() {
        let p = VehicleParams::default();
        let r = 20.0;
        // line passes through the neutral nozzle position, curving left
        let (gx, gy) = p.gun_mount;
        let path = build_path(Pose2D::new(gx - 1.0, gy, 0.0), &[PathPiece::Straight { length: 1.0 }, PathPiece::Arc { radius: r, angle_deg: 10.0 }], 0.02).unwrap();
        let mut scene = Scene::new(tile(), 5);
        scene.add_polyline(&path, 0.12, &[(0.0, path.length())], 0.0, MARKING_INTENSITY);
        let spec = forward();
        let raster = render_ground(&scene, &spec.pose_for(&Pose2D::default()), &spec, 0.0, &RenderOptions::default());
        let off = estimate_gun_offset(&raster, &ClassicalDetector::new(0.12), &GunCalibration::for_camera(&spec, &p)).unwrap();
        assert!(off.abs() < 0.003, "{off}");
    }
}
