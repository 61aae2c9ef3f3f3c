//! Facial landmark detection and densification.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KeypointPool, Provenance};
use crate::error::{Error, Result};
use crate::raster::RasterImage;
use crate::sketch::Point2;

/// Points in the 68-point facial landmark layout.
pub const LANDMARK_COUNT: usize = 68;

/// Densification stops once the pool has this many points.
pub const DENSE_POOL_SIZE: usize = 256;

/// Semantic polylines of the 68-point layout as (first, last, closed).
const POLYLINES: [(usize, usize, bool); 9] = [
    (0, 16, false),  // jaw
    (17, 21, false), // right brow
    (22, 26, false), // left brow
    (27, 30, false), // nose bridge
    (31, 35, false), // nostrils
    (36, 41, true),  // right eye
    (42, 47, true),  // left eye
    (48, 59, true),  // outer lips
    (60, 67, true),  // inner lips
];

/// A landmark model: the 68 landmarks of the first face in `image`, in
/// normalized coordinates, or [`Error::NoFaceFound`].
pub trait FaceLandmarker: Send + Sync {
    fn detect(&self, image: &RasterImage) -> Result<Vec<Point2>>;
}

/// Runs the landmarker and densifies its output into a keypoint pool.
pub fn detect_landmarks(image: &RasterImage, landmarker: &dyn FaceLandmarker) -> Result<KeypointPool> {
    let raw = landmarker.detect(image)?;
    if raw.len() != LANDMARK_COUNT {
        return Err(Error::invalid("landmarks", format!("expected {LANDMARK_COUNT} points, got {}", raw.len())));
    }
    Ok(densify_landmarks(&raw))
}

/// Inserts midpoints between consecutive points of every facial polyline,
/// pass after pass, until the pool holds at least [`DENSE_POOL_SIZE`]
/// points. With 68 distinct landmarks two passes give 257 points.
pub fn densify_landmarks(landmarks: &[Point2]) -> KeypointPool {
    let mut pool = KeypointPool::new();
    // Each polyline as a list of pool indices; `None` marks a landmark that
    // was dropped as a duplicate or out of range.
    let mut index_of = Vec::with_capacity(landmarks.len());
    for (i, &p) in landmarks.iter().enumerate() {
        let added = pool.push(p.clamped_unit(), Provenance::FacialLandmark, format!("landmark:{i}"));
        index_of.push(added.then(|| pool.len() - 1));
    }
    let mut lines: Vec<(Vec<usize>, bool)> = POLYLINES
        .iter()
        .filter(|(_, last, _)| *last < landmarks.len())
        .map(|&(a, b, closed)| ((a..=b).filter_map(|i| index_of[i]).collect(), closed))
        .collect();

    let mut level = 0;
    while pool.len() < DENSE_POOL_SIZE {
        level += 1;
        let before = pool.len();
        for (line, closed) in lines.iter_mut() {
            let segments = if *closed { line.len() } else { line.len().saturating_sub(1) };
            if line.len() < 2 {
                continue;
            }
            let mut dense = Vec::with_capacity(line.len() * 2);
            for s in 0..segments {
                let (a, b) = (line[s], line[(s + 1) % line.len()]);
                dense.push(a);
                let (pa, pb) = (pool.points[a], pool.points[b]);
                let mid = Point2::new(0.5 * (pa.x + pb.x), 0.5 * (pa.y + pb.y));
                if pool.push(mid, Provenance::FacialLandmark, format!("midpoint:{level}:{a}-{b}")) {
                    dense.push(pool.len() - 1);
                }
            }
            if !*closed {
                dense.push(line[line.len() - 1]);
            }
            *line = dense;
        }
        if pool.len() == before {
            break;
        }
    }
    pool
}

trait ClampUnit {
    fn clamped_unit(self) -> Self;
}

impl ClampUnit for Point2 {
    fn clamped_unit(self) -> Self {
        Point2::new(self.x.clamp(0.0, 1.0), self.y.clamp(0.0, 1.0))
    }
}

/// Template landmarker.
///
/// Finds the largest 4-connected region of skin-coloured pixels and maps a
/// mean landmark shape, given relative to the face bounding box, into that
/// region's bounding box. A region smaller than `min_area_frac` of the image
/// or filling less than `min_fill` of its bounding box is not a face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateLandmarker {
    pub skin_rgb: [f64; 3],
    pub tolerance: f64,
    pub min_area_frac: f64,
    pub min_fill: f64,
    /// 68 points in face-box coordinates, `[0, 1]²`.
    pub mean_shape: Vec<[f64; 2]>,
}

impl TemplateLandmarker {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let model: TemplateLandmarker = serde_json::from_str(&text)
            .map_err(|e| Error::BadWeights { path: path.to_path_buf(), message: e.to_string() })?;
        if model.mean_shape.len() != LANDMARK_COUNT {
            return Err(Error::BadWeights {
                path: path.to_path_buf(),
                message: format!("mean_shape has {} points, expected {LANDMARK_COUNT}", model.mean_shape.len()),
            });
        }
        Ok(model)
    }

    /// Bounding box `(x0, y0, x1, y1)` in pixels (inclusive) of the face region.
    pub fn face_box(&self, image: &RasterImage) -> Result<(usize, usize, usize, usize)> {
        let rgb = image.to_rgb();
        let (w, h) = (rgb.width(), rgb.height());
        let tol2 = self.tolerance * self.tolerance;
        let skin: Vec<bool> = rgb
            .data()
            .chunks_exact(3)
            .map(|px| (0..3).map(|c| (px[c] - self.skin_rgb[c]).powi(2)).sum::<f64>() <= tol2)
            .collect();

        let mut seen = vec![false; w * h];
        let mut best: Option<(usize, (usize, usize, usize, usize))> = None;
        let mut queue = VecDeque::new();
        for start in 0..w * h {
            if !skin[start] || seen[start] {
                continue;
            }
            seen[start] = true;
            queue.push_back(start);
            let mut area = 0;
            let mut bbox = (usize::MAX, usize::MAX, 0, 0);
            while let Some(i) = queue.pop_front() {
                let (x, y) = (i % w, i / w);
                area += 1;
                bbox = (bbox.0.min(x), bbox.1.min(y), bbox.2.max(x), bbox.3.max(y));
                let mut visit = |j: usize| {
                    if skin[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < w {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            if best.is_none_or(|(a, _)| area > a) {
                best = Some((area, bbox));
            }
        }

        let (area, bbox) = best.ok_or(Error::NoFaceFound)?;
        let box_area = (bbox.2 - bbox.0 + 1) * (bbox.3 - bbox.1 + 1);
        if (area as f64) < self.min_area_frac * (w * h) as f64 || (area as f64) < self.min_fill * box_area as f64 {
            return Err(Error::NoFaceFound);
        }
        Ok(bbox)
    }
}

impl FaceLandmarker for TemplateLandmarker {
    fn detect(&self, image: &RasterImage) -> Result<Vec<Point2>> {
        let (x0, y0, x1, y1) = self.face_box(image)?;
        let (w, h) = (image.width() as f64, image.height() as f64);
        // Pixel edges of the box in normalized units.
        let (bx, by) = (x0 as f64 / w, y0 as f64 / h);
        let (bw, bh) = ((x1 + 1 - x0) as f64 / w, (y1 + 1 - y0) as f64 / h);
        Ok(self.mean_shape.iter().map(|&[u, v]| Point2::new(bx + u * bw, by + v * bh)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_landmarks() -> Vec<Point2> {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.1 + 0.8 * ((state >> 11) as f64 / (1u64 << 53) as f64)
        };
        (0..LANDMARK_COUNT).map(|_| Point2::new(next(), next())).collect()
    }

    #[test]
    fn two_passes_reach_the_dense_size() {
        let pool = densify_landmarks(&grid_landmarks());
        assert_eq!(pool.len(), 257);
        assert!(pool.provenance.iter().all(|&p| p == Provenance::FacialLandmark));
        assert_eq!(pool.source_meta[0], "landmark:0");
    }

    #[test]
    fn midpoint_sits_between_its_parents() {
        let pool = densify_landmarks(&grid_landmarks());
        let m = pool.points[LANDMARK_COUNT];
        let (a, b) = (pool.points[0], pool.points[1]);
        assert_eq!(m, Point2::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y)));
    }

    #[test]
    fn noise_has_no_face() {
        let model = TemplateLandmarker {
            skin_rgb: [0.9, 0.7, 0.6],
            tolerance: 0.1,
            min_area_frac: 0.05,
            min_fill: 0.5,
            mean_shape: vec![[0.5, 0.5]; LANDMARK_COUNT],
        };
        let mut state = 12345u64;
        let noise = RasterImage::from_fn(64, 64, 3, |_, _, _| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        });
        assert!(matches!(model.detect(&noise), Err(Error::NoFaceFound)));
        let face = RasterImage::from_fn(64, 64, 3, |x, y, c| {
            let inside = (x as f64 - 32.0).powi(2) + (y as f64 - 30.0).powi(2) < 400.0;
            if inside {
                [0.9, 0.7, 0.6][c]
            } else {
                1.0
            }
        });
        let pts = model.detect(&face).unwrap();
        assert!((pts[0].x - 0.5).abs() < 0.02 && (pts[0].y - 30.5 / 64.0).abs() < 0.02);
    }
}
