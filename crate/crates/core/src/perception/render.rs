//! Orthographic ground rendering: procedural asphalt, markings and paint.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraSpec, GroundRaster};
use crate::geometry::{PathPolyline, Pose2D, Vec2};
use crate::vehicle::PaintSegment;

pub const MARKING_INTENSITY: f32 = 0.85;
const TEXTURE_MEAN: f64 = 0.35;
const TEXTURE_SPAN: f64 = 0.2;
const TILE: usize = 2048;
const TEXEL: f64 = 0.001;
const INV_TEXEL: f64 = 1.0 / TEXEL;
const DAMAGE_GRAIN: f64 = 0.002;
const GRID_CELL: f64 = 1.0;

/// Wrapping asphalt texture, anchored to world coordinates at 1 mm per texel.
#[derive(Debug, Clone, PartialEq)]
pub struct TextureTile {
    seed: u64,
    data: Vec<f32>,
}

impl TextureTile {
    /// Multi-octave value noise normalised to mean 0.35 within [0.15, 0.55].
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves: [(usize, f64); 6] = [(128, 0.5), (64, 0.6), (32, 0.8), (16, 1.0), (8, 1.0), (4, 0.9)];
        let mut acc = vec![0.0f64; TILE * TILE];
        for (cell, weight) in octaves {
            let n = TILE / cell;
            let lattice: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            for y in 0..TILE {
                let (y0, fy) = (y / cell, smooth((y % cell) as f64 / cell as f64));
                let y1 = (y0 + 1) % n;
                for x in 0..TILE {
                    let (x0, fx) = (x / cell, smooth((x % cell) as f64 / cell as f64));
                    let x1 = (x0 + 1) % n;
                    let top = lattice[y0 * n + x0] * (1.0 - fx) + lattice[y0 * n + x1] * fx;
                    let bot = lattice[y1 * n + x0] * (1.0 - fx) + lattice[y1 * n + x1] * fx;
                    acc[y * TILE + x] += weight * (top * (1.0 - fy) + bot * fy);
                }
            }
        }
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let dev = acc.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max).max(1e-12);
        let scale = TEXTURE_SPAN / dev;
        let data = acc.iter().map(|v| (TEXTURE_MEAN + (v - mean) * scale) as f32).collect();
        Self { seed, data }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    /// Bilinear sample at a world position.
    pub fn sample(&self, p: Vec2) -> f32 {
        self.sample_xy(p.x, p.y)
    }

    #[inline]
    fn sample_xy(&self, x: f64, y: f64) -> f32 {
        const MASK: usize = TILE - 1;
        let u = x * INV_TEXEL;
        let v = y * INV_TEXEL;
        let (fu, fv) = (u.floor(), v.floor());
        let (tx, ty) = ((u - fu) as f32, (v - fv) as f32);
        let x0 = (fu as i64 as usize) & MASK;
        let y0 = (fv as i64 as usize) & MASK;
        let x1 = (x0 + 1) & MASK;
        let y1 = (y0 + 1) & MASK;
        let d = &self.data;
        let top = d[y0 * TILE + x0] * (1.0 - tx) + d[y0 * TILE + x1] * tx;
        let bot = d[y1 * TILE + x0] * (1.0 - tx) + d[y1 * TILE + x1] * tx;
        top * (1.0 - ty) + bot * ty
    }
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// One straight piece of marking or paint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    pub a: Vec2,
    pub b: Vec2,
    pub half_width: f64,
    /// Fraction of the stroke's surface removed by wear.
    pub damage: f64,
    pub intensity: f32,
}

/// Precomputed unit direction and length of a stroke.
struct StrokeFrame {
    a: Vec2,
    u: Vec2,
    len: f64,
}

impl StrokeFrame {
    fn new(s: &Stroke) -> Option<Self> {
        let ab = s.b - s.a;
        let len = ab.norm();
        (len > 0.0).then(|| Self { a: s.a, u: ab * (1.0 / len), len })
    }

    /// Coverage in [0, 1] of a pixel of size `gsd` centred at `p`, ignoring
    /// damage. Lateral edges are anti-aliased; the longitudinal extent is
    /// the half-open interval [a, b).
    #[inline]
    fn coverage(&self, p: Vec2, half_width: f64, gsd: f64) -> f32 {
        let ap = p - self.a;
        let along = ap.dot(self.u);
        if !(0.0..self.len).contains(&along) {
            return 0.0;
        }
        let d = self.u.cross(ap).abs();
        ((half_width - d) / gsd + 0.5).clamp(0.0, 1.0) as f32
    }
}

/// Everything visible on the ground: texture plus markings and paint, with a
/// coarse spatial index.
#[derive(Debug, Clone)]
pub struct Scene {
    texture: Arc<TextureTile>,
    damage_seed: u64,
    strokes: Vec<Stroke>,
    grid: HashMap<(i64, i64), Vec<u32>>,
}

impl Scene {
    pub fn new(texture: Arc<TextureTile>, damage_seed: u64) -> Self {
        Self {
            texture,
            damage_seed,
            strokes: Vec::new(),
            grid: HashMap::new(),
        }
    }

    pub fn texture(&self) -> &TextureTile {
        &self.texture
    }

    pub fn strokes(&self) -> &[Stroke] {
        &self.strokes
    }

    pub fn add_stroke(&mut self, stroke: Stroke) {
        let id = self.strokes.len() as u32;
        let r = stroke.half_width;
        let (lo, hi) = (
            Vec2::new(stroke.a.x.min(stroke.b.x) - r, stroke.a.y.min(stroke.b.y) - r),
            Vec2::new(stroke.a.x.max(stroke.b.x) + r, stroke.a.y.max(stroke.b.y) + r),
        );
        for cx in cell(lo.x)..=cell(hi.x) {
            for cy in cell(lo.y)..=cell(hi.y) {
                self.grid.entry((cx, cy)).or_default().push(id);
            }
        }
        self.strokes.push(stroke);
    }

    /// Adds the parts of `path` inside each arc-length interval as strokes.
    pub fn add_polyline(&mut self, path: &PathPolyline, width: f64, intervals: &[(f64, f64)], damage: f64, intensity: f32) {
        let cum = path.cumulative_s();
        for &(s0, s1) in intervals {
            let (s0, s1) = (s0.max(0.0), s1.min(path.length()));
            if s1 <= s0 {
                continue;
            }
            let mut stops = vec![s0];
            stops.extend(cum.iter().copied().filter(|&s| s > s0 && s < s1));
            stops.push(s1);
            for w in stops.windows(2) {
                self.add_stroke(Stroke {
                    a: path.sample_clamped(w[0]).0.position(),
                    b: path.sample_clamped(w[1]).0.position(),
                    half_width: width / 2.0,
                    damage,
                    intensity,
                });
            }
        }
    }

    pub fn add_paint(&mut self, seg: &PaintSegment) {
        self.add_stroke(Stroke {
            a: seg.start,
            b: seg.end,
            half_width: seg.width / 2.0,
            damage: 0.0,
            intensity: MARKING_INTENSITY,
        });
    }

    fn candidates(&self, lo: Vec2, hi: Vec2) -> Vec<u32> {
        let mut ids = Vec::new();
        for cx in cell(lo.x)..=cell(hi.x) {
            for cy in cell(lo.y)..=cell(hi.y) {
                if let Some(v) = self.grid.get(&(cx, cy)) {
                    ids.extend_from_slice(v);
                }
            }
        }
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn damaged(&self, p: Vec2, fraction: f64) -> bool {
        if fraction <= 0.0 {
            return false;
        }
        let ix = (p.x / DAMAGE_GRAIN).floor() as i64;
        let iy = (p.y / DAMAGE_GRAIN).floor() as i64;
        hash01(ix, iy, self.damage_seed) < fraction
    }
}

fn cell(v: f64) -> i64 {
    (v / GRID_CELL).floor() as i64
}

fn hash01(ix: i64, iy: i64, seed: u64) -> f64 {
    let mut z = seed ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RenderOptions {
    /// Longitudinal motion-blur length on the ground (speed × exposure).
    pub blur_length_m: f64,
    /// Global illumination gain; 1.0 when unset.
    pub gain: Option<f32>,
}

/// Renders the ground under a camera whose raster centre sits at `pose`.
pub fn render_ground(scene: &Scene, pose: &Pose2D, spec: &CameraSpec, timestamp: f64, options: &RenderOptions) -> GroundRaster {
    assert!(spec.is_valid(), "invalid camera spec");
    let blur_px = (options.blur_length_m / spec.gsd).max(0.0);
    let margin = if blur_px > 0.0 { blur_px.ceil() as usize + 1 } else { 0 };
    let ext = CameraSpec { rows: spec.rows + 2 * margin, ..*spec };
    let mut raster = GroundRaster::filled(ext, *pose, timestamp, 0.0);
    let (cos, sin) = (pose.heading.cos(), pose.heading.sin());
    let world = |row: f64, col: f64| {
        let l = ext.pixel_local(row, col);
        Vec2::new(pose.x + cos * l.x - sin * l.y, pose.y + sin * l.x + cos * l.y)
    };

    // world position is affine in (row, col)
    let origin = world(0.0, 0.0);
    let d_row = world(1.0, 0.0) - origin;
    let d_col = world(0.0, 1.0) - origin;
    for r in 0..ext.rows {
        let base = origin + d_row * r as f64;
        let out = &mut raster.pixels[r * ext.cols..(r + 1) * ext.cols];
        for (c, px) in out.iter_mut().enumerate() {
            let c = c as f64;
            *px = scene.texture.sample_xy(base.x + d_col.x * c, base.y + d_col.y * c);
        }
    }

    let corners = [
        world(-1.0, -1.0),
        world(-1.0, ext.cols as f64),
        world(ext.rows as f64, -1.0),
        world(ext.rows as f64, ext.cols as f64),
    ];
    let lo = Vec2::new(corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min), corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min));
    let hi = Vec2::new(corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max), corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max));
    let ids = scene.candidates(lo, hi);
    if !ids.is_empty() {
        let mut cover = vec![0.0f32; ext.rows * ext.cols];
        let mut level = vec![0.0f32; ext.rows * ext.cols];
        for id in ids {
            let s = &scene.strokes[id as usize];
            let n = (s.b - s.a).normalized().perp_left() * s.half_width;
            let pts = [s.a + n, s.a - n, s.b + n, s.b - n].map(|p| raster.world_pixel(p));
            let r0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min).floor() - 1.0;
            let r1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
            let c0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).floor() - 1.0;
            let c1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).ceil() + 1.0;
            if r1 < 0.0 || c1 < 0.0 || r0 >= ext.rows as f64 || c0 >= ext.cols as f64 {
                continue;
            }
            let (r0, r1) = (r0.max(0.0) as usize, (r1 as usize).min(ext.rows - 1));
            let (c0, c1) = (c0.max(0.0) as usize, (c1 as usize).min(ext.cols - 1));
            let Some(geo) = StrokeFrame::new(s) else { continue };
            for r in r0..=r1 {
                let base = origin + d_row * r as f64;
                for c in c0..=c1 {
                    let p = base + d_col * c as f64;
                    let cv = geo.coverage(p, s.half_width, spec.gsd);
                    let k = r * ext.cols + c;
                    if cv > cover[k] && !scene.damaged(p, s.damage) {
                        cover[k] = cv;
                        level[k] = s.intensity;
                    }
                }
            }
        }
        for k in 0..cover.len() {
            let c = cover[k];
            if c > 0.0 {
                raster.pixels[k] = raster.pixels[k] * (1.0 - c) + level[k] * c;
            }
        }
    }

    let mut out = if margin > 0 {
        let mut out = GroundRaster::filled(*spec, *pose, timestamp, 0.0);
        box_blur_rows(&raster, &mut out, margin, blur_px);
        out
    } else {
        raster
    };
    if let Some(g) = options.gain {
        out.pixels.iter_mut().for_each(|p| *p *= g);
    }
    out
}

/// Longitudinal box blur of length `len` pixels with fractional ends.
fn box_blur_rows(src: &GroundRaster, dst: &mut GroundRaster, margin: usize, len: f64) {
    let cols = src.spec.cols;
    let rows = src.spec.rows;
    // prefix[r * cols + c] = sum of rows [0, r) in column c
    let mut prefix = vec![0.0f64; (rows + 1) * cols];
    for r in 0..rows {
        let (done, next) = prefix.split_at_mut((r + 1) * cols);
        let prev = &done[r * cols..];
        for c in 0..cols {
            next[c] = prev[c] + src.pixels[r * cols + c] as f64;
        }
    }
    let split = |x: f64| {
        let x = x.clamp(0.0, rows as f64);
        let i = (x.floor() as usize).min(rows - 1);
        (i, x - i as f64)
    };
    for r in 0..dst.spec.rows {
        let centre = (r + margin) as f64 + 0.5;
        let (ia, fa) = split(centre - len / 2.0);
        let (ib, fb) = split(centre + len / 2.0);
        for c in 0..cols {
            let ib_ = prefix[ib * cols + c] + fb * src.pixels[ib * cols + c] as f64;
            let ia_ = prefix[ia * cols + c] + fa * src.pixels[ia * cols + c] as f64;
            dst.pixels[r * cols + c] = ((ib_ - ia_) / len) as f32;
        }
    }
}
