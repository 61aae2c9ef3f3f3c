//! Reference soft rasterizer.
//!
//! A pixel's coverage by a stroke depends on the exact distance `d` from the
//! sample position to the cubic curve: the stroke's box profile of the
//! stroke width, blurred by a smootherstep edge of total width `falloff_px`.
//! The nearest point is found by scanning `samples` points of the curve and
//! refining every local minimum with safeguarded Newton. Each pixel averages
//! a `supersample`×`supersample` grid of positions, and strokes darken
//! multiplicatively toward their color:
//!
//! `out_c = Π_s (1 - opacity_s · coverage_s · (1 - color_s,c))`
//!
//! At the nearest point the distance is stationary in the curve parameter,
//! so `∂d/∂P_j = B_j(t*) · n` where `n` is the unit vector from the sample to
//! the curve. The distance has creases where two parts of one curve are
//! equally near (inside tight loops); gradients there are one-sided.

use super::{Rasterizer, RenderGradients};
use crate::error::{Error, Result};
use crate::par;
use crate::raster::{PixelGradient, RasterImage};
use crate::sketch::{bernstein, SketchCanvas};

#[derive(Clone, Debug)]
pub struct SoftRasterizer {
    samples: usize,
    falloff_px: f64,
    supersample: usize,
    basis: Vec<[f64; 4]>,
}

impl Default for SoftRasterizer {
    fn default() -> Self {
        Self::new(64, 1.0, 2)
    }
}

struct Prepared {
    cp: [[f64; 2]; 4],
    pts: Vec<[f64; 2]>,
    half: f64,
    // Longest distance between consecutive samples.
    spacing: f64,
    outer: f64,
    opacity: f64,
    ink: [f64; 3],
    // Inclusive pixel bounds of possibly covered pixels.
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    visible: bool,
}

/// A stroke's contribution at one pixel.
struct Hit {
    stroke: usize,
    coverage: f64,
    d_coverage: f64,
    t: f64,
    normal: [f64; 2],
}

impl SoftRasterizer {
    /// `samples` curve samples seed the nearest-point search, `falloff_px`
    /// is the anti-aliasing transition width and each pixel averages a
    /// `supersample`×`supersample` grid of sub-pixel positions.
    pub fn new(samples: usize, falloff_px: f64, supersample: usize) -> Self {
        assert!(samples >= 2, "need at least two samples per curve");
        assert!(falloff_px > 0.0);
        assert!(supersample >= 1);
        let basis = (0..samples).map(|i| bernstein(i as f64 / (samples - 1) as f64)).collect();
        SoftRasterizer { samples, falloff_px, supersample, basis }
    }

    fn sub_offsets(&self) -> Vec<[f64; 2]> {
        let n = self.supersample;
        let step = 1.0 / n as f64;
        (0..n * n).map(|i| [((i % n) as f64 + 0.5) * step, ((i / n) as f64 + 0.5) * step]).collect()
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    fn prepare(&self, canvas: &SketchCanvas) -> Vec<Prepared> {
        let (w, h) = (canvas.width_px as f64, canvas.height_px as f64);
        canvas
            .strokes
            .iter()
            .map(|s| {
                let cp = s.control_points.map(|p| [p.x * w, p.y * h]);
                let pts: Vec<[f64; 2]> = self
                    .basis
                    .iter()
                    .map(|b| {
                        [
                            b[0] * cp[0][0] + b[1] * cp[1][0] + b[2] * cp[2][0] + b[3] * cp[3][0],
                            b[0] * cp[0][1] + b[1] * cp[1][1] + b[2] * cp[2][1] + b[3] * cp[3][1],
                        ]
                    })
                    .collect();
                let half = canvas.width_to_px(s.width) / 2.0;
                let outer = half + self.falloff_px / 2.0;
                let (mut lx, mut ly, mut hx, mut hy) =
                    (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
                for p in &pts {
                    lx = lx.min(p[0]);
                    ly = ly.min(p[1]);
                    hx = hx.max(p[0]);
                    hy = hy.max(p[1]);
                }
                // Sub-pixel samples lie strictly inside pixel i, i.e. in (i, i + 1).
                let lo_x = (lx - outer).floor() - 1.0;
                let lo_y = (ly - outer).floor() - 1.0;
                let hi_x = (hx + outer).floor() + 1.0;
                let hi_y = (hy + outer).floor() + 1.0;
                let visible = s.opacity > 0.0 && hi_x >= 0.0 && hi_y >= 0.0 && lo_x < w && lo_y < h;
                let spacing = pts
                    .windows(2)
                    .map(|p| ((p[1][0] - p[0][0]).powi(2) + (p[1][1] - p[0][1]).powi(2)).sqrt())
                    .fold(0.0, f64::max);
                Prepared {
                    cp,
                    pts,
                    spacing,
                    half,
                    outer,
                    opacity: s.opacity,
                    ink: s.color.map(|c| 1.0 - c),
                    x0: lo_x.max(0.0) as usize,
                    y0: lo_y.max(0.0) as usize,
                    x1: hi_x.clamp(0.0, w - 1.0) as usize,
                    y1: hi_y.clamp(0.0, h - 1.0) as usize,
                    visible,
                }
            })
            .collect()
    }

    fn hit(&self, index: usize, ps: &Prepared, q: [f64; 2]) -> Option<Hit> {
        let d2: Vec<f64> = ps.pts.iter().map(|p| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).collect();
        // The curve stays within one sample spacing of its samples, so a
        // sample farther than that beyond the stroke reach rules out its
        // neighbourhood.
        let reach = ps.outer + ps.spacing;
        let last = self.samples - 1;
        let mut best: Option<(f64, f64)> = None;
        for i in 0..=last {
            let di = d2[i];
            let is_local_min = (i == 0 || di <= d2[i - 1]) && (i == last || di <= d2[i + 1]);
            if !is_local_min || di.sqrt() >= reach {
                continue;
            }
            let lo = i.saturating_sub(1) as f64 / last as f64;
            let hi = (i + 1).min(last) as f64 / last as f64;
            let t = nearest_param(&ps.cp, q, lo, hi, i as f64 / last as f64);
            let foot = point_at(&ps.cp, t);
            let d = ((q[0] - foot[0]).powi(2) + (q[1] - foot[1]).powi(2)).sqrt();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, t));
            }
        }
        let (d, t) = best?;
        if d >= ps.outer {
            return None;
        }
        let foot = point_at(&ps.cp, t);
        let (coverage, d_coverage) = falloff(d, ps.half, self.falloff_px);
        let normal = if d > 0.0 { [(foot[0] - q[0]) / d, (foot[1] - q[1]) / d] } else { [0.0, 0.0] };
        Some(Hit { stroke: index, coverage, d_coverage, t, normal })
    }

    fn hits_at(&self, prepared: &[Prepared], x: usize, y: usize, q: [f64; 2], out: &mut Vec<Hit>) {
        out.clear();
        for (i, ps) in prepared.iter().enumerate() {
            if ps.visible && x >= ps.x0 && x <= ps.x1 && y >= ps.y0 && y <= ps.y1 {
                if let Some(hit) = self.hit(i, ps, q) {
                    out.push(hit);
                }
            }
        }
    }
}

#[inline]
fn point_at(cp: &[[f64; 2]; 4], t: f64) -> [f64; 2] {
    let b = bernstein(t);
    [
        b[0] * cp[0][0] + b[1] * cp[1][0] + b[2] * cp[2][0] + b[3] * cp[3][0],
        b[0] * cp[0][1] + b[1] * cp[1][1] + b[2] * cp[2][1] + b[3] * cp[3][1],
    ]
}

/// Half the derivative of the squared distance from `q` to B(t), and the
/// derivative of that.
#[inline]
fn stationarity(cp: &[[f64; 2]; 4], q: [f64; 2], t: f64) -> (f64, f64) {
    let s = 1.0 - t;
    let p = point_at(cp, t);
    let mut d1 = [0.0; 2];
    let mut d2 = [0.0; 2];
    for a in 0..2 {
        d1[a] =
            3.0 * (s * s * (cp[1][a] - cp[0][a]) + 2.0 * s * t * (cp[2][a] - cp[1][a]) + t * t * (cp[3][a] - cp[2][a]));
        d2[a] = 6.0 * (s * (cp[2][a] - 2.0 * cp[1][a] + cp[0][a]) + t * (cp[3][a] - 2.0 * cp[2][a] + cp[1][a]));
    }
    let r = [p[0] - q[0], p[1] - q[1]];
    let f = r[0] * d1[0] + r[1] * d1[1];
    let df = d1[0] * d1[0] + d1[1] * d1[1] + r[0] * d2[0] + r[1] * d2[1];
    (f, df)
}

/// Parameter of the point on the curve nearest to `q`, searched inside the
/// bracket `[lo, hi]` around the best sample `t0` with safeguarded Newton.
fn nearest_param(cp: &[[f64; 2]; 4], q: [f64; 2], mut lo: f64, mut hi: f64, t0: f64) -> f64 {
    let (f_lo, _) = stationarity(cp, q, lo);
    let (f_hi, _) = stationarity(cp, q, hi);
    if f_lo >= 0.0 && f_hi <= 0.0 {
        // No sign change bracketing a minimum; keep the closest of the
        // candidates.
        let dist = |t: f64| {
            let p = point_at(cp, t);
            (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)
        };
        return [lo, t0, hi].into_iter().min_by(|a, b| dist(*a).total_cmp(&dist(*b))).unwrap_or(t0);
    }
    if f_lo >= 0.0 {
        return lo;
    }
    if f_hi <= 0.0 {
        return hi;
    }
    let mut t = t0.clamp(lo, hi);
    for _ in 0..40 {
        let (f, df) = stationarity(cp, q, t);
        if f == 0.0 {
            return t;
        }
        if f < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - f / df;
        let next = if df > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - t).abs() <= 1e-14 {
            return next;
        }
        t = next;
    }
    t
}

/// Smootherstep edge of total width `width` centered on zero: 0 below
/// `-width/2`, 1 above `width/2`. Returns the value and its derivative.
#[inline]
fn edge(x: f64, width: f64) -> (f64, f64) {
    let u = x / width + 0.5;
    if u <= 0.0 {
        (0.0, 0.0)
    } else if u >= 1.0 {
        (1.0, 0.0)
    } else {
        let s = u * u * u * (u * (6.0 * u - 15.0) + 10.0);
        let ds = 30.0 * u * u * (1.0 - u) * (1.0 - u);
        (s, ds / width)
    }
}

/// Coverage at distance `d` from the centerline of a stroke of half-width
/// `half`: the stroke's box profile `[-half, half]` blurred by the edge
/// kernel. Even in `d`, hence smooth across the centerline even for strokes
/// thinner than the kernel. Returns the value and its derivative in `d`.
#[inline]
fn falloff(d: f64, half: f64, width: f64) -> (f64, f64) {
    let (a, da) = edge(half - d, width);
    let (b, db) = edge(half + d, width);
    (a + b - 1.0, db - da)
}

impl Rasterizer for SoftRasterizer {
    fn name(&self) -> &'static str {
        "reference"
    }

    fn forward(&self, canvas: &SketchCanvas) -> Result<RasterImage> {
        canvas.validate()?;
        let (w, h) = (canvas.width_px as usize, canvas.height_px as usize);
        let prepared = self.prepare(canvas);
        let mut img = RasterImage::white(w, h);
        let offsets = self.sub_offsets();
        let weight = 1.0 / offsets.len() as f64;
        par::for_each_chunk_mut(img.data_mut(), w * 3, |y, row| {
            let mut hits = Vec::new();
            for x in 0..w {
                let mut sum = [0.0; 3];
                for off in &offsets {
                    self.hits_at(&prepared, x, y, [x as f64 + off[0], y as f64 + off[1]], &mut hits);
                    let mut v = [1.0; 3];
                    for hit in &hits {
                        let ps = &prepared[hit.stroke];
                        for c in 0..3 {
                            v[c] *= 1.0 - ps.opacity * hit.coverage * ps.ink[c];
                        }
                    }
                    for c in 0..3 {
                        sum[c] += v[c];
                    }
                }
                for c in 0..3 {
                    row[x * 3 + c] = sum[c] * weight;
                }
            }
        });
        Ok(img)
    }

    fn backward(&self, canvas: &SketchCanvas, pixel_grad: &PixelGradient) -> Result<RenderGradients> {
        canvas.validate()?;
        let (w, h) = (canvas.width_px as usize, canvas.height_px as usize);
        if pixel_grad.dims() != (w, h, 3) {
            return Err(Error::ShapeMismatch {
                expected: format!("{w}x{h}x3"),
                actual: {
                    let (a, b, c) = pixel_grad.dims();
                    format!("{a}x{b}x{c}")
                },
            });
        }
        let prepared = self.prepare(canvas);
        let n = prepared.len();
        let offsets = self.sub_offsets();
        let weight = 1.0 / offsets.len() as f64;

        // Per-row partial gradients, summed in row order afterwards so the
        // result does not depend on scheduling.
        let rows: Vec<Vec<[[f64; 2]; 4]>> = par::map_range(h, |y| {
            let mut acc = vec![[[0.0; 2]; 4]; n];
            let mut hits = Vec::new();
            let mut factors = Vec::new();
            for x in 0..w {
                let g = [pixel_grad.get(x, y, 0), pixel_grad.get(x, y, 1), pixel_grad.get(x, y, 2)].map(|v| v * weight);
                if g == [0.0; 3] {
                    continue;
                }
                for off in &offsets {
                    self.hits_at(&prepared, x, y, [x as f64 + off[0], y as f64 + off[1]], &mut hits);
                    if hits.is_empty() {
                        continue;
                    }
                    factors.clear();
                    factors.extend(hits.iter().map(|hit| {
                        let ps = &prepared[hit.stroke];
                        [0, 1, 2].map(|c| 1.0 - ps.opacity * hit.coverage * ps.ink[c])
                    }));
                    for (k, hit) in hits.iter().enumerate() {
                        if hit.d_coverage == 0.0 || hit.normal == [0.0, 0.0] {
                            continue;
                        }
                        let ps = &prepared[hit.stroke];
                        let mut d_loss_d_cov = 0.0;
                        for c in 0..3 {
                            let others: f64 =
                                factors.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, f)| f[c]).product();
                            d_loss_d_cov -= g[c] * ps.opacity * ps.ink[c] * others;
                        }
                        let d_loss_d_dist = d_loss_d_cov * hit.d_coverage;
                        if d_loss_d_dist == 0.0 {
                            continue;
                        }
                        // The foot parameter is stationary (or pinned at an end),
                        // so only the explicit dependence through B(t) remains.
                        let b = bernstein(hit.t);
                        let grad = &mut acc[hit.stroke];
                        for j in 0..4 {
                            grad[j][0] += d_loss_d_dist * b[j] * hit.normal[0];
                            grad[j][1] += d_loss_d_dist * b[j] * hit.normal[1];
                        }
                    }
                }
            }
            acc
        });

        let mut points = vec![[[0.0f64; 2]; 4]; n];
        for row in rows {
            for (s, g) in row.iter().enumerate() {
                for j in 0..4 {
                    points[s][j][0] += g[j][0];
                    points[s][j][1] += g[j][1];
                }
            }
        }
        for grads in points.iter_mut() {
            for g in grads.iter_mut() {
                g[0] *= w as f64;
                g[1] *= h as f64;
            }
        }
        Ok(RenderGradients { points })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point2, RoundTag, Stroke};

    #[test]
    fn falloff_is_continuous_at_both_ends() {
        let (half, width) = (0.75, 1.0);
        assert_eq!(falloff(0.0, half, width), (1.0, 0.0));
        let (c, _) = falloff(half + 0.5 * width - 1e-12, half, width);
        assert!(c.abs() < 1e-10);
        let (c, dc) = falloff(half, half, width);
        assert!((c - 0.5).abs() < 1e-12 && dc < 0.0);
    }

    #[test]
    fn thin_stroke_falloff_is_flat_on_the_centerline() {
        let (c0, dc0) = falloff(0.0, 0.1, 1.0);
        assert!(c0 > 0.0 && c0 < 1.0);
        assert_eq!(dc0, 0.0);
        let (c1, _) = falloff(1e-4, 0.1, 1.0);
        assert!((c1 - c0).abs() < 1e-6);
    }

    #[test]
    fn empty_canvas_renders_white() {
        let img = SoftRasterizer::default().forward(&SketchCanvas::new(16, 16)).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn horizontal_stroke_peaks_on_its_row() {
        let stroke = Stroke::new(
            [Point2::new(0.1, 0.5), Point2::new(0.4, 0.5), Point2::new(0.6, 0.5), Point2::new(0.9, 0.5)],
            RoundTag::Face,
        );
        let mut canvas = SketchCanvas::with_strokes(32, 32, vec![stroke]);
        canvas.strokes[0].width = 2.0 / 32.0;
        let img = SoftRasterizer::default().forward(&canvas).unwrap();
        let ink: Vec<f64> = (0..32).map(|y| (0..32).map(|x| 1.0 - img.get(x, y, 0)).sum()).collect();
        let peak = ink.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert!(peak == 15 || peak == 16, "peak row {peak}");
        assert_eq!(ink[0], 0.0);
    }

    #[test]
    fn colored_stroke_tints_channels() {
        let mut s = Stroke::new([Point2::new(0.5, 0.5); 4], RoundTag::Face);
        s.width = 4.0 / 16.0;
        s.color = [1.0, 0.0, 0.0];
        let img = SoftRasterizer::default().forward(&SketchCanvas::with_strokes(16, 16, vec![s])).unwrap();
        assert_eq!(img.get(8, 8, 0), 1.0);
        assert!(img.get(8, 8, 1) < 0.1);
    }
}
