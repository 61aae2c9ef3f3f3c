//! Contour keypoints: Canny edges of the face-parsing mask.
//!
//! The detector runs on the label map rather than on photo intensities:
//! every label becomes a one-hot channel, each channel is blurred and
//! differentiated, and a pixel keeps the channel with the strongest
//! gradient. All label boundaries therefore produce edges of equal
//! strength, and no edge appears inside a region.

use serde::{Deserialize, Serialize};

use super::{KeypointPool, Label, MaskImage, Provenance};
use crate::error::{Error, Result};
use crate::sketch::Point2;

/// Edge pixels are thinned to at most this many points.
pub const MAX_CONTOUR_POINTS: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CannyConfig {
    /// Gaussian blur sigma in pixels.
    pub sigma: f64,
    /// Hysteresis thresholds as fractions of the largest gradient magnitude.
    pub low: f64,
    pub high: f64,
}

impl Default for CannyConfig {
    fn default() -> Self {
        CannyConfig { sigma: 1.0, low: 0.1, high: 0.2 }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Separable blur with edge replication.
fn blur(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let at = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] =
                kernel.iter().enumerate().map(|(i, k)| k * src[y * w + at(x as isize + i as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] =
                kernel.iter().enumerate().map(|(i, k)| k * tmp[at(y as isize + i as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Binary edge map (row-major) of the label boundaries in `mask`.
pub fn canny_edges(mask: &MaskImage, cfg: &CannyConfig) -> Vec<bool> {
    let (w, h) = (mask.width(), mask.height());
    let kernel = gaussian_kernel(cfg.sigma);
    let mut mag = vec![0.0f64; w * h];
    let mut gx = vec![0.0f64; w * h];
    let mut gy = vec![0.0f64; w * h];
    let at = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    for label in Label::ALL {
        if !mask.labels().contains(&label) {
            continue;
        }
        let onehot: Vec<f64> = mask.labels().iter().map(|&l| if l == label { 1.0 } else { 0.0 }).collect();
        let smooth = blur(&onehot, w, h, &kernel);
        let s = |x: isize, y: isize| smooth[at(y, h) * w + at(x, w)];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let dx = (s(x + 1, y - 1) + 2.0 * s(x + 1, y) + s(x + 1, y + 1))
                    - (s(x - 1, y - 1) + 2.0 * s(x - 1, y) + s(x - 1, y + 1));
                let dy = (s(x - 1, y + 1) + 2.0 * s(x, y + 1) + s(x + 1, y + 1))
                    - (s(x - 1, y - 1) + 2.0 * s(x, y - 1) + s(x + 1, y - 1));
                let m = (dx * dx + dy * dy).sqrt();
                let i = y as usize * w + x as usize;
                if m > mag[i] {
                    mag[i] = m;
                    gx[i] = dx;
                    gy[i] = dy;
                }
            }
        }
    }

    // Non-maximum suppression across the gradient direction.
    let mut thin = vec![0.0f64; w * h];
    let m_at = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if mag[i] == 0.0 {
                continue;
            }
            let angle = gy[i].atan2(gx[i]).to_degrees().rem_euclid(180.0);
            let (ox, oy) = if !(22.5..157.5).contains(&angle) {
                (1, 0)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (0, 1)
            } else {
                (-1, 1)
            };
            let (xi, yi) = (x as isize, y as isize);
            // Ties keep the pixel on the lower/left side only, so a plateau
            // straddling a boundary yields one line.
            if mag[i] > m_at(xi - ox, yi - oy) && mag[i] >= m_at(xi + ox, yi + oy) {
                thin[i] = mag[i];
            }
        }
    }

    let max = thin.iter().copied().fold(0.0, f64::max);
    let mut edges = vec![false; w * h];
    if max == 0.0 {
        return edges;
    }
    let (low, high) = (cfg.low * max, cfg.high * max);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= high).collect();
    for &i in &stack {
        edges[i] = true;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !edges[j] && thin[j] >= low {
                edges[j] = true;
                stack.push(j);
            }
        }
    }
    edges
}

/// Edge pixels of the mask as a keypoint pool.
///
/// Edge pixels are ordered by walking each 8-connected edge chain, then
/// thinned by a uniform stride to at most [`MAX_CONTOUR_POINTS`]. A pixel
/// maps to its centre in normalized coordinates.
pub fn extract_contour_points(mask: &MaskImage, cfg: &CannyConfig) -> Result<KeypointPool> {
    let (w, h) = (mask.width(), mask.height());
    let edges = canny_edges(mask, cfg);
    let mut visited = vec![false; w * h];
    let mut order = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !edges[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            order.push(i);
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in [(1, 1), (0, 1), (-1, 1), (-1, 0), (1, -1), (0, -1), (-1, -1), (1, 0)] {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges[j] && !visited[j] {
                    visited[j] = true;
                    stack.push(j);
                }
            }
        }
    }
    if order.is_empty() {
        return Err(Error::EmptyContour);
    }
    let stride = order.len().div_ceil(MAX_CONTOUR_POINTS);
    let points = order.iter().step_by(stride).map(|&i| {
        let (x, y) = (i % w, i / w);
        (
            Point2::new((x as f64 + 0.5) / w as f64, (y as f64 + 0.5) / h as f64),
            Provenance::ContourEdge,
            format!("edge:{x},{y}"),
        )
    });
    Ok(KeypointPool::from_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(size: usize, r: f64) -> MaskImage {
        let c = size as f64 / 2.0;
        let labels = (0..size * size)
            .map(|i| {
                let (x, y) = ((i % size) as f64 + 0.5, (i / size) as f64 + 0.5);
                if (x - c).hypot(y - c) <= r {
                    Label::Skin
                } else {
                    Label::Background
                }
            })
            .collect();
        MaskImage::from_labels(size, size, labels).unwrap()
    }

    #[test]
    fn all_background_is_empty_contour() {
        let mask = MaskImage::from_labels(16, 16, vec![Label::Background; 256]).unwrap();
        assert!(matches!(extract_contour_points(&mask, &CannyConfig::default()), Err(Error::EmptyContour)));
    }

    #[test]
    fn disc_edges_follow_the_circle() {
        let (size, r) = (64, 20.0);
        let pool = extract_contour_points(&disc(size, r), &CannyConfig::default()).unwrap();
        assert!(pool.len() > 60);
        for p in &pool.points {
            let d = (p.x * size as f64 - 32.0).hypot(p.y * size as f64 - 32.0);
            assert!((d - r).abs() <= 2.0, "{d}");
        }
        assert!(pool.min_pairwise_distance().unwrap() >= 1e-4);
    }

    #[test]
    fn cap_is_respected() {
        // Many small discs give far more edge pixels than the cap.
        let size = 256;
        let labels = (0..size * size)
            .map(|i| if (i % size / 3 + i / size / 3) % 2 == 0 { Label::Skin } else { Label::Background })
            .collect();
        let mask = MaskImage::from_labels(size, size, labels).unwrap();
        let pool = extract_contour_points(&mask, &CannyConfig::default()).unwrap();
        assert!(pool.len() <= MAX_CONTOUR_POINTS);
        assert!(pool.len() > MAX_CONTOUR_POINTS / 4);
    }
}
