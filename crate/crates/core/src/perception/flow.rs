//! Ground-speed estimation from pyramidal Lucas-Kanade feature tracking
//! between two down-camera frames.

use serde::{Deserialize, Serialize};

use super::GroundRaster;

/// Implied speeds above this are reported invalid.
pub const MAX_VALID_SPEED: f64 = 9.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub speed: f64,
    pub confidence: f64,
    pub valid: bool,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub corners: usize,
    pub min_tracks: usize,
    pub levels: usize,
    pub window: usize,
    pub max_iterations: usize,
    /// Mean absolute intensity difference above which a track is dropped.
    pub max_residual: f64,
    /// Maximum angle between flow and the longitudinal axis.
    pub max_angle_deg: f64,
    /// Longitudinal search range of the coarse global alignment (full-res px).
    pub search_px: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            corners: 64,
            min_tracks: 16,
            levels: 3,
            window: 15,
            max_iterations: 20,
            max_residual: 0.04,
            max_angle_deg: 30.0,
            search_px: 120,
        }
    }
}

#[derive(Debug, Clone)]
struct Image {
    w: usize,
    h: usize,
    data: Vec<f32>,
}

impl Image {
    fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Bilinear sample with clamped borders.
    fn sample(&self, x: f64, y: f64) -> f32 {
        let x = x.clamp(0.0, (self.w - 1) as f64);
        let y = y.clamp(0.0, (self.h - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.w - 1), (y0 + 1).min(self.h - 1));
        let (fx, fy) = ((x - x0 as f64) as f32, (y - y0 as f64) as f32);
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bot = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bot * fy
    }

    fn downsample(&self) -> Image {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.w, self.h);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, kv) in K.iter().enumerate() {
                    let xx = (x as isize + k as isize - 2).clamp(0, w as isize - 1) as usize;
                    acc += kv * self.data[y * w + xx];
                }
                tmp[y * w + x] = acc;
            }
        }
        let (nw, nh) = (w / 2, h / 2);
        let mut out = vec![0.0f32; nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                let mut acc = 0.0;
                for (k, kv) in K.iter().enumerate() {
                    let yy = (2 * y as isize + k as isize - 2).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[yy * w + 2 * x];
                }
                out[y * nw + x] = acc;
            }
        }
        Image { w: nw, h: nh, data: out }
    }

    fn gradients(&self) -> (Image, Image) {
        let (w, h) = (self.w, self.h);
        let mut gx = vec![0.0f32; w * h];
        let mut gy = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                gx[y * w + x] = (self.at(xr, y) - self.at(xl, y)) / (xr - xl).max(1) as f32;
                gy[y * w + x] = (self.at(x, yd) - self.at(x, yu)) / (yd - yu).max(1) as f32;
            }
        }
        (Image { w, h, data: gx }, Image { w, h, data: gy })
    }
}

struct Level {
    img: Image,
    gx: Image,
    gy: Image,
}

fn pyramid(r: &GroundRaster, levels: usize) -> Vec<Image> {
    let mut out = vec![Image { w: r.cols(), h: r.rows(), data: r.pixels.clone() }];
    for _ in 1..levels {
        let next = out.last().unwrap().downsample();
        out.push(next);
    }
    out
}

/// Best whole-pixel (dx, dy) aligning `curr` to `prev` at a coarse level.
fn global_shift(prev: &Image, curr: &Image, max_dy: isize, max_dx: isize) -> (isize, isize) {
    let mut best = (f64::INFINITY, 0, 0);
    let min_overlap = prev.h as isize / 4;
    for dy in -2..=max_dy {
        if prev.h as isize - dy.abs() < min_overlap {
            continue;
        }
        for dx in -max_dx..=max_dx {
            let mut ssd = 0.0f64;
            let mut n = 0usize;
            for y in 0..prev.h as isize {
                let yc = y + dy;
                if yc < 0 || yc >= curr.h as isize {
                    continue;
                }
                for x in 0..prev.w as isize {
                    let xc = x + dx;
                    if xc < 0 || xc >= curr.w as isize {
                        continue;
                    }
                    let d = (prev.at(x as usize, y as usize) - curr.at(xc as usize, yc as usize)) as f64;
                    ssd += d * d;
                    n += 1;
                }
            }
            if n > 0 && ssd / (n as f64) < best.0 {
                best = (ssd / n as f64, dx, dy);
            }
        }
    }
    (best.1, best.2)
}

/// Shi-Tomasi corner strength (minimum eigenvalue of the structure tensor
/// over a `win`-sized box) at every pixel.
fn min_eigen(gx: &Image, gy: &Image, win: usize) -> Vec<f32> {
    let (w, h) = (gx.w, gx.h);
    let integral = |f: &dyn Fn(usize) -> f64| {
        let mut s = vec![0.0f64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0.0;
            for x in 0..w {
                row += f(y * w + x);
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
            }
        }
        s
    };
    let sxx = integral(&|i| (gx.data[i] * gx.data[i]) as f64);
    let sxy = integral(&|i| (gx.data[i] * gy.data[i]) as f64);
    let syy = integral(&|i| (gy.data[i] * gy.data[i]) as f64);
    let half = win / 2;
    let mut out = vec![0.0f32; w * h];
    let boxsum = |s: &[f64], x0: usize, y0: usize, x1: usize, y1: usize| {
        s[y1 * (w + 1) + x1] - s[y0 * (w + 1) + x1] - s[y1 * (w + 1) + x0] + s[y0 * (w + 1) + x0]
    };
    for y in half..h.saturating_sub(half) {
        for x in half..w.saturating_sub(half) {
            let (x0, y0, x1, y1) = (x - half, y - half, x + half + 1, y + half + 1);
            let a = boxsum(&sxx, x0, y0, x1, y1);
            let b = boxsum(&sxy, x0, y0, x1, y1);
            let c = boxsum(&syy, x0, y0, x1, y1);
            let tr = (a + c) / 2.0;
            let det = a * c - b * b;
            out[y * w + x] = (tr - (tr * tr - det).max(0.0).sqrt()) as f32;
        }
    }
    out
}

/// Iterative LK refinement of displacement `d` for the feature at `p`.
/// Returns the refined displacement, or `None` when the track is lost.
fn track(prev: &Level, curr: &Image, p: (f64, f64), mut d: (f64, f64), half: isize, iters: usize) -> Option<(f64, f64)> {
    let mut g = [0.0f64; 3];
    let n = (2 * half + 1) as usize;
    let mut tmpl = Vec::with_capacity(n * n);
    for j in -half..=half {
        for i in -half..=half {
            let (x, y) = (p.0 + i as f64, p.1 + j as f64);
            let ix = prev.gx.sample(x, y) as f64;
            let iy = prev.gy.sample(x, y) as f64;
            g[0] += ix * ix;
            g[1] += ix * iy;
            g[2] += iy * iy;
            tmpl.push((prev.img.sample(x, y) as f64, ix, iy));
        }
    }
    let det = g[0] * g[2] - g[1] * g[1];
    if det.abs() < 1e-9 {
        return None;
    }
    for _ in 0..iters {
        let (mut bx, mut by) = (0.0, 0.0);
        let mut k = 0;
        for j in -half..=half {
            for i in -half..=half {
                let (t, ix, iy) = tmpl[k];
                k += 1;
                let c = curr.sample(p.0 + d.0 + i as f64, p.1 + d.1 + j as f64) as f64;
                let e = t - c;
                bx += e * ix;
                by += e * iy;
            }
        }
        let dx = (g[2] * bx - g[1] * by) / det;
        let dy = (g[0] * by - g[1] * bx) / det;
        d = (d.0 + dx, d.1 + dy);
        let (qx, qy) = (p.0 + d.0, p.1 + d.1);
        if qx < -1.0 || qy < -1.0 || qx > curr.w as f64 || qy > curr.h as f64 {
            return None;
        }
        if dx * dx + dy * dy < 1e-4 {
            break;
        }
    }
    Some(d)
}

fn residual(prev: &Image, curr: &Image, p: (f64, f64), d: (f64, f64), half: isize) -> f64 {
    let mut acc = 0.0;
    let mut n = 0;
    for j in -half..=half {
        for i in -half..=half {
            let a = prev.sample(p.0 + i as f64, p.1 + j as f64) as f64;
            let b = curr.sample(p.0 + d.0 + i as f64, p.1 + d.1 + j as f64) as f64;
            acc += (a - b).abs();
            n += 1;
        }
    }
    acc / n as f64
}

/// Ground speed from two consecutive down-camera frames `dt` seconds apart.
///
/// Ground features move toward higher row indices as the vehicle drives
/// forward; the speed is the median longitudinal displacement of the
/// surviving tracks.
pub fn lk_velocity(prev: &GroundRaster, curr: &GroundRaster, dt: f64, params: &FlowParams) -> VelocityEstimate {
    assert_eq!(prev.spec, curr.spec, "lk_velocity needs frames from the same camera");
    assert!(dt > 0.0, "dt must be positive");
    let invalid = VelocityEstimate { speed: 0.0, confidence: 0.0, valid: false, timestamp: curr.timestamp };
    let levels = params.levels.max(1);
    let pp = pyramid(prev, levels);
    let cp = pyramid(curr, levels);
    let top = levels - 1;
    let scale = (1usize << top) as f64;
    let max_dy = (params.search_px as f64 / scale).ceil() as isize;
    let (gdx, gdy) = global_shift(&pp[top], &cp[top], max_dy, 3);
    let guess = (gdx as f64 * scale, gdy as f64 * scale);

    let prev_levels: Vec<Level> = pp
        .into_iter()
        .map(|img| {
            let (gx, gy) = img.gradients();
            Level { img, gx, gy }
        })
        .collect();

    // corners that stay in view after the coarse shift
    let base = &prev_levels[0];
    let (w, h) = (base.img.w as f64, base.img.h as f64);
    let half = (params.window / 2) as isize;
    let margin = half as f64 + 2.0;
    let strength = min_eigen(&base.gx, &base.gy, 7);
    let cell = 16usize;
    let mut cands: Vec<(f32, usize, usize)> = Vec::new();
    for cy in (0..base.img.h).step_by(cell) {
        for cx in (0..base.img.w).step_by(cell) {
            let mut best: Option<(f32, usize, usize)> = None;
            for y in cy..(cy + cell).min(base.img.h) {
                for x in cx..(cx + cell).min(base.img.w) {
                    let (fx, fy) = (x as f64, y as f64);
                    let (tx, ty) = (fx + guess.0, fy + guess.1);
                    let inside = |a: f64, b: f64| a >= margin && b >= margin && a < w - margin && b < h - margin;
                    if !inside(fx, fy) || !inside(tx, ty) {
                        continue;
                    }
                    let s = strength[y * base.img.w + x];
                    if best.is_none_or(|b| s > b.0) {
                        best = Some((s, x, y));
                    }
                }
            }
            if let Some(b) = best.filter(|b| b.0 > 1e-5) {
                cands.push(b);
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
    cands.truncate(params.corners);
    if cands.is_empty() {
        return invalid;
    }

    let max_tan = params.max_angle_deg.to_radians().tan();
    let mut flows = Vec::new();
    for &(_, x, y) in &cands {
        let mut d = (guess.0 / scale, guess.1 / scale);
        let mut lost = false;
        for lvl in (0..levels).rev() {
            let s = (1usize << lvl) as f64;
            let p = (x as f64 / s, y as f64 / s);
            match track(&prev_levels[lvl], &cp[lvl], p, d, half, params.max_iterations) {
                Some(nd) => d = nd,
                None => {
                    lost = true;
                    break;
                }
            }
            if lvl > 0 {
                d = (d.0 * 2.0, d.1 * 2.0);
            }
        }
        if lost {
            continue;
        }
        let p = (x as f64, y as f64);
        if residual(&prev_levels[0].img, &cp[0], p, d, half) > params.max_residual {
            continue;
        }
        let mag = (d.0 * d.0 + d.1 * d.1).sqrt();
        if mag > 0.5 && d.0.abs() > max_tan * d.1.abs() {
            continue;
        }
        flows.push(d.1);
    }
    let confidence = flows.len() as f64 / params.corners as f64;
    if flows.len() < params.min_tracks {
        return VelocityEstimate { confidence, ..invalid };
    }
    flows.sort_by(|a, b| a.total_cmp(b));
    let m = flows.len();
    let med = if m % 2 == 1 { flows[m / 2] } else { (flows[m / 2 - 1] + flows[m / 2]) / 2.0 };
    let speed = (med * prev.gsd() / dt).max(0.0);
    VelocityEstimate {
        speed,
        confidence: confidence.min(1.0),
        valid: speed <= MAX_VALID_SPEED,
        timestamp: curr.timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::super::render::tests::tile;
    use super::super::{render_ground, CameraSpec, RenderOptions, Scene};
    use super::*;
    use crate::geometry::Pose2D;
    use crate::vehicle::VehicleParams;
    use proptest::prelude::*;

    fn frames(speed: f64, dt: f64, x0: f64) -> (GroundRaster, GroundRaster) {
        let scene = Scene::new(tile(), 0);
        let spec = CameraSpec::down(&VehicleParams::default());
        let o = RenderOptions::default();
        let a = render_ground(&scene, &Pose2D::new(x0, 0.3, 0.0), &spec, 0.0, &o);
        let b = render_ground(&scene, &Pose2D::new(x0 + speed * dt, 0.3, 0.0), &spec, dt, &o);
        (a, b)
    }

    #[test]
    fn identical_frames_give_zero() {
        let (a, _) = frames(0.0, 0.01, 0.0);
        let v = lk_velocity(&a, &a, 0.01, &FlowParams::default());
        assert!(v.valid);
        assert!(v.speed.abs() < 1e-6, "{}", v.speed);
    }

    #[test]
    fn forty_pixel_shift() {
        let (a, b) = frames(4.0, 0.01, 1.3);
        let v = lk_velocity(&a, &b, 0.01, &FlowParams::default());
        assert!(v.valid);
        assert!((v.speed - 4.0).abs() <= 0.08, "{}", v.speed);
    }

    #[test]
    fn above_envelope_is_invalid() {
        let (a, b) = frames(10.0, 0.01, 0.4);
        let v = lk_velocity(&a, &b, 0.01, &FlowParams::default());
        assert!(!v.valid, "{v:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10))]
        #[test]
        fn integer_shift_recovered(px in 0u32..70, x0 in 0.0f64..50.0) {
            let (a, b) = frames(px as f64 * 0.1, 0.01, x0);
            let v = lk_velocity(&a, &b, 0.01, &FlowParams::default());
            prop_assert!(v.valid);
            let est_px = v.speed * 0.01 / 0.001;
            prop_assert!((est_px - px as f64).abs() <= 0.25, "{} vs {}", est_px, px);
        }
    }
}
