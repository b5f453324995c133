//! Synthetic ground cameras and the vision stack that runs on them: line
//! width QA, mark/gap lengths, optical-flow velocity, marking detection and
//! spray-gun offset estimation.

mod detect;
mod flow;
mod marks;
mod render;
mod width;

use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::geometry::{Pose2D, Vec2};
use crate::vehicle::VehicleParams;

pub use detect::{
    estimate_gun_offset, gun_offset_from_detection, ClassicalDetector, GunCalibration, MarkingDetection,
    MarkingDetector,
};
pub use flow::{lk_velocity, FlowParams, VelocityEstimate, MAX_VALID_SPEED};
pub use marks::{measure_marks_and_gaps, MarkKind, PresenceRule};
pub use render::{render_ground, RenderOptions, Scene, Stroke, TextureTile, MARKING_INTENSITY};
pub use width::{estimate_line_width, otsu_threshold, LineWidth, WidthEstimator, WidthSample};

/// Geometry of an orthographic ground camera fixed to the vehicle body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    /// Pixels across the travel direction.
    pub cols: usize,
    /// Pixels along the travel direction; row 0 is the forward-most row.
    pub rows: usize,
    pub gsd: f64,
    /// Raster centre in the rear-axle body frame (forward, left).
    pub mount: Vec2,
}

impl CameraSpec {
    /// Down-looking QA camera behind the spray gun.
    pub fn down(params: &VehicleParams) -> Self {
        let (gx, gy) = params.gun_mount;
        Self {
            cols: 512,
            rows: 400,
            gsd: 0.001,
            mount: Vec2::new(gx - 0.45, gy),
        }
    }

    /// Forward ground patch ahead of the spray gun.
    pub fn forward(params: &VehicleParams) -> Self {
        let (gx, gy) = params.gun_mount;
        let rows = 512;
        let gsd = 0.002;
        Self {
            cols: 512,
            rows,
            gsd,
            mount: Vec2::new(gx + 0.05 + rows as f64 * gsd / 2.0, gy),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.cols > 0 && self.rows > 0 && self.gsd.is_finite() && self.gsd > 0.0
    }

    /// World pose of the raster centre for a vehicle at `vehicle`.
    pub fn pose_for(&self, vehicle: &Pose2D) -> Pose2D {
        let c = vehicle.transform_point(self.mount);
        Pose2D::new(c.x, c.y, vehicle.heading)
    }

    pub fn footprint(&self) -> (f64, f64) {
        (self.rows as f64 * self.gsd, self.cols as f64 * self.gsd)
    }

    /// Camera-local (forward, left) offset of a pixel centre.
    pub fn pixel_local(&self, row: f64, col: f64) -> Vec2 {
        Vec2::new(
            ((self.rows as f64 - 1.0) / 2.0 - row) * self.gsd,
            ((self.cols as f64 - 1.0) / 2.0 - col) * self.gsd,
        )
    }

    /// Inverse of [`pixel_local`](Self::pixel_local): (row, col).
    pub fn local_pixel(&self, local: Vec2) -> (f64, f64) {
        (
            (self.rows as f64 - 1.0) / 2.0 - local.x / self.gsd,
            (self.cols as f64 - 1.0) / 2.0 - local.y / self.gsd,
        )
    }
}

/// Grayscale orthographic ground image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundRaster {
    pub spec: CameraSpec,
    pub pixels: Vec<f32>,
    pub origin_pose: Pose2D,
    pub timestamp: f64,
}

impl GroundRaster {
    pub fn filled(spec: CameraSpec, origin_pose: Pose2D, timestamp: f64, value: f32) -> Self {
        Self {
            spec,
            pixels: vec![value; spec.rows * spec.cols],
            origin_pose,
            timestamp,
        }
    }

    pub fn rows(&self) -> usize {
        self.spec.rows
    }

    pub fn cols(&self) -> usize {
        self.spec.cols
    }

    pub fn gsd(&self) -> f64 {
        self.spec.gsd
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[row * self.spec.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.pixels[row * self.spec.cols + col] = v;
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * self.spec.cols..(row + 1) * self.spec.cols]
    }

    pub fn pixel_world(&self, row: f64, col: f64) -> Vec2 {
        self.origin_pose.transform_point(self.spec.pixel_local(row, col))
    }

    pub fn world_pixel(&self, world: Vec2) -> (f64, f64) {
        self.spec.local_pixel(self.origin_pose.inverse_transform_point(world))
    }

    /// Copy with every pixel multiplied by `gain`.
    pub fn scaled(&self, gain: f32) -> Self {
        Self {
            pixels: self.pixels.iter().map(|p| p * gain).collect(),
            ..self.clone()
        }
    }

    /// Binary PGM (P5), 8 bit, values clamped to [0, 1].
    pub fn write_pgm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.spec.cols, self.spec.rows)?;
        let bytes: Vec<u8> = self
            .pixels
            .iter()
            .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: &Path) -> io::Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_pgm(io::BufWriter::new(f))
    }

    /// Box-downsampled copy used for UI thumbnails.
    pub fn thumbnail(&self, factor: usize) -> (usize, usize, Vec<u8>) {
        let factor = factor.max(1);
        let (rows, cols) = (self.spec.rows / factor, self.spec.cols / factor);
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0f32;
                for dr in 0..factor {
                    for dc in 0..factor {
                        acc += self.get(r * factor + dr, c * factor + dc);
                    }
                }
                let v = acc / (factor * factor) as f32;
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        (rows, cols, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn camera_geometry_places_gun_row_below_forward_patch() {
        let p = VehicleParams::default();
        let c = CameraSpec::forward(&p);
        let (row, col) = c.local_pixel(Vec2::new(p.gun_mount.0, p.gun_mount.1) - c.mount);
        assert!((row - 536.5).abs() < 1e-9, "{row}");
        assert!((col - 255.5).abs() < 1e-9);
        let b = CameraSpec::down(&p);
        assert_eq!((b.cols, b.rows), (512, 400));
        assert!((b.mount.x - 0.55).abs() < 1e-12);
    }

    #[test]
    fn pixel_mapping_roundtrip() {
        let spec = CameraSpec::down(&VehicleParams::default());
        let r = GroundRaster::filled(spec, Pose2D::new(3.0, -2.0, 0.7), 0.0, 0.0);
        let w = r.pixel_world(10.25, 300.5);
        let (row, col) = r.world_pixel(w);
        assert!((row - 10.25).abs() < 1e-9 && (col - 300.5).abs() < 1e-9);
        // row 0 is ahead of the centre, column 0 is to the left
        let fwd = r.origin_pose.inverse_transform_point(r.pixel_world(0.0, 255.5));
        assert!(fwd.x > 0.19 && fwd.y.abs() < 1e-9);
        let left = r.origin_pose.inverse_transform_point(r.pixel_world(199.5, 0.0));
        assert!(left.y > 0.25);
    }

    #[test]
    fn pgm_header_and_size() {
        let spec = CameraSpec { cols: 4, rows: 3, gsd: 0.01, mount: Vec2::ZERO };
        let r = GroundRaster::filled(spec, Pose2D::default(), 0.0, 0.5);
        let mut buf = Vec::new();
        r.write_pgm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n4 3\n255\n"));
        assert_eq!(buf.len(), 11 + 12);
        assert_eq!(buf[11], 128);
    }
}
