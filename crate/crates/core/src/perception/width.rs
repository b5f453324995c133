//! Line-width QA on the down camera.

use serde::{Deserialize, Serialize};

use super::GroundRaster;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSample {
    pub frame_index: u64,
    pub width: Option<f64>,
    pub confidence: f64,
    pub timestamp: f64,
}

/// Result of one width estimate, with the fitted line centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineWidth {
    pub width: Option<f64>,
    pub confidence: f64,
    /// Mean centre column of accepted rows.
    pub center_col: Option<f64>,
}

impl LineWidth {
    fn absent(confidence: f64) -> Self {
        Self { width: None, confidence, center_col: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthEstimator {
    /// Rows averaged around each scan row before thresholding.
    pub smooth_rows: usize,
    /// Dark gaps up to this many pixels inside a run are bridged.
    pub max_gap_px: usize,
    /// Minimum (bright - dark) / dark between the Otsu classes.
    pub min_contrast: f64,
    pub min_confidence: f64,
}

impl Default for WidthEstimator {
    fn default() -> Self {
        Self {
            smooth_rows: 7,
            max_gap_px: 12,
            min_contrast: 0.6,
            min_confidence: 0.2,
        }
    }
}

/// Otsu threshold over a 256-bin histogram spanning the data range. Returns
/// the threshold and the dark and bright class means.
pub fn otsu_threshold(values: &[f32]) -> Option<(f32, f64, f64)> {
    let (lo, hi) = values.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(hi > lo) {
        return None;
    }
    const BINS: usize = 256;
    let scale = (BINS as f32 - 1e-3) / (hi - lo);
    let mut hist = [0u64; BINS];
    let mut sums = [0.0f64; BINS];
    for &v in values {
        let b = (((v - lo) * scale) as usize).min(BINS - 1);
        hist[b] += 1;
        sums[b] += v as f64;
    }
    let total = values.len() as f64;
    let sum_all: f64 = sums.iter().sum();
    let (mut w0, mut s0) = (0.0f64, 0.0f64);
    let mut best = (f64::NEG_INFINITY, 0usize, 0.0, 0.0);
    for b in 0..BINS - 1 {
        w0 += hist[b] as f64;
        s0 += sums[b];
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let (m0, m1) = (s0 / w0, (sum_all - s0) / w1);
        let between = w0 * w1 * (m1 - m0).powi(2);
        if between > best.0 {
            best = (between, b, m0, m1);
        }
    }
    if best.0 == f64::NEG_INFINITY {
        return None;
    }
    let t = lo + (best.1 as f32 + 1.0) / scale;
    Some((t, best.2, best.3))
}

impl WidthEstimator {
    pub fn estimate(&self, raster: &GroundRaster) -> LineWidth {
        let (rows, cols) = (raster.rows(), raster.cols());
        let smooth = smooth_rows(raster, self.smooth_rows);
        let Some((thresh, dark, bright)) = otsu_threshold(&smooth) else {
            return LineWidth::absent(0.0);
        };
        if !(dark > 0.0) || (bright - dark) / dark <= self.min_contrast {
            return LineWidth::absent(0.0);
        }

        let mut per_row: Vec<(usize, f64, f64)> = Vec::new();
        for r in 0..rows {
            let row = &smooth[r * cols..(r + 1) * cols];
            if let Some((left, right)) = self.row_edges(row, thresh, dark) {
                per_row.push((r, left, right));
            }
        }
        if per_row.is_empty() {
            return LineWidth::absent(0.0);
        }
        let widths: Vec<f64> = per_row.iter().map(|(_, l, r)| r - l).collect();
        let med = median(&widths);
        let mad = median(&widths.iter().map(|w| (w - med).abs()).collect::<Vec<_>>());
        let band = 3.0 * mad.max(1.0);
        let accepted: Vec<&(usize, f64, f64)> = per_row.iter().filter(|(_, l, r)| (r - l - med).abs() <= band).collect();
        let confidence = accepted.len() as f64 / rows as f64;
        if confidence < self.min_confidence || accepted.len() < 2 {
            return LineWidth::absent(confidence);
        }

        // a line crossing the raster at an angle appears wider per row
        let n = accepted.len() as f64;
        let (mr, mc) = accepted.iter().fold((0.0, 0.0), |(a, b), (r, l, rt)| (a + *r as f64, b + (l + rt) / 2.0));
        let (mr, mc) = (mr / n, mc / n);
        let (sxy, sxx) = accepted.iter().fold((0.0, 0.0), |(a, b), (r, l, rt)| {
            let dx = *r as f64 - mr;
            (a + dx * ((l + rt) / 2.0 - mc), b + dx * dx)
        });
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        let cos = 1.0 / (1.0 + slope * slope).sqrt();
        let w = median(&accepted.iter().map(|(_, l, r)| r - l).collect::<Vec<_>>());
        LineWidth {
            width: Some(w * cos * raster.gsd()).filter(|w| *w > 0.0),
            confidence,
            center_col: Some(mc - 0.5),
        }
    }

    /// Sub-pixel left and right edges (pixel-edge coordinates) of the widest
    /// bright run in one row.
    fn row_edges(&self, row: &[f32], thresh: f32, dark: f64) -> Option<(f64, f64)> {
        let n = row.len();
        let mut runs: Vec<(usize, usize)> = Vec::new();
        let mut i = 0;
        while i < n {
            if row[i] > thresh {
                let start = i;
                while i < n && row[i] > thresh {
                    i += 1;
                }
                match runs.last_mut() {
                    Some(last) if start - last.1 <= self.max_gap_px => last.1 = i,
                    _ => runs.push((start, i)),
                }
            } else {
                i += 1;
            }
        }
        let &(a, b) = runs.iter().max_by_key(|(a, b)| b - a)?;
        if a == 0 || b == n {
            // touching the border: the true edge is outside the view
            return None;
        }
        let mut inner: Vec<f64> = row[a..b].iter().map(|&v| v as f64).collect();
        inner.sort_by(|x, y| x.total_cmp(y));
        let inner = inner[inner.len() / 2];
        let outside = |lo: isize, hi: isize| {
            let vals: Vec<f64> = (lo..hi).filter(|&k| k >= 0 && (k as usize) < n).map(|k| row[k as usize] as f64).collect();
            if vals.is_empty() {
                dark
            } else {
                vals.iter().sum::<f64>() / vals.len() as f64
            }
        };
        let level_l = (inner + outside(a as isize - 8, a as isize - 2)) / 2.0;
        let level_r = (inner + outside(b as isize + 2, b as isize + 8)) / 2.0;

        // left: first pixel from outside at or above the level
        let lo = a.saturating_sub(3).max(1);
        let k = (lo..(a + 4).min(b)).find(|&k| row[k] as f64 >= level_l)?;
        let (v0, v1) = (row[k - 1] as f64, row[k] as f64);
        let left = if v1 > v0 { (k as f64 - 0.5) + (level_l - v0) / (v1 - v0) } else { k as f64 };
        // right: last pixel from outside at or above the level
        let hi = (b + 2).min(n - 1);
        let k = (a.max(b.saturating_sub(4))..hi).rev().find(|&k| row[k] as f64 >= level_r)?;
        let (v0, v1) = (row[k] as f64, row[k + 1] as f64);
        let right = if v0 > v1 { (k as f64 + 0.5) + (v0 - level_r) / (v0 - v1) } else { k as f64 + 1.0 };
        (right > left).then_some((left, right))
    }
}

/// Width sample of a down-camera raster with default settings.
pub fn estimate_line_width(raster: &GroundRaster, frame_index: u64) -> WidthSample {
    let est = WidthEstimator::default().estimate(raster);
    WidthSample {
        frame_index,
        width: est.width,
        confidence: est.confidence,
        timestamp: raster.timestamp,
    }
}

fn smooth_rows(raster: &GroundRaster, window: usize) -> Vec<f32> {
    let (rows, cols) = (raster.rows(), raster.cols());
    let half = window / 2;
    let mut out = vec![0.0f32; rows * cols];
    let mut prefix = vec![0.0f64; rows + 1];
    for c in 0..cols {
        for r in 0..rows {
            prefix[r + 1] = prefix[r] + raster.pixels[r * cols + c] as f64;
        }
        for r in 0..rows {
            let (a, b) = (r.saturating_sub(half), (r + half + 1).min(rows));
            out[r * cols + c] = ((prefix[b] - prefix[a]) / (b - a) as f64) as f32;
        }
    }
    out
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}
