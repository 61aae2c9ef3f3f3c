//! Stroke seeding: keypoint pools, farthest point sampling and stroke
//! initialization.
//!
//! Two pools feed the two rounds. Facial landmarks (densified along the
//! facial polylines) seed the face strokes; edge pixels of the face-parsing
//! mask seed the contour strokes. [`fps_select`] spreads `n` seeds over a
//! pool and [`init_strokes`] grows a short random stroke from each seed.

mod contour;
mod landmarks;
mod parsing;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use contour::{canny_edges, extract_contour_points, CannyConfig, MAX_CONTOUR_POINTS};
pub use landmarks::{densify_landmarks, detect_landmarks, FaceLandmarker, TemplateLandmarker, LANDMARK_COUNT};
pub use parsing::{parse_face, FaceParser, Label, MaskImage, PaletteParser};

use crate::error::{Error, Result};
use crate::sketch::{Point2, RoundTag, Stroke};

/// Points closer than this are duplicates.
pub const DEDUP_DISTANCE: f64 = 1e-4;

/// Half-side of the box the extra control points are drawn from.
pub const INIT_OFFSET: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FacialLandmark,
    ContourEdge,
}

/// Candidate seed points. `provenance[i]` and `source_meta[i]` describe
/// `points[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeypointPool {
    pub points: Vec<Point2>,
    pub provenance: Vec<Provenance>,
    pub source_meta: Vec<String>,
}

impl KeypointPool {
    pub fn new() -> Self {
        KeypointPool { points: Vec::new(), provenance: Vec::new(), source_meta: Vec::new() }
    }

    /// Builds a pool, dropping points outside `[0, 1]²` and duplicates.
    pub fn from_points(points: impl IntoIterator<Item = (Point2, Provenance, String)>) -> Self {
        let mut pool = KeypointPool::new();
        for (p, prov, meta) in points {
            pool.push(p, prov, meta);
        }
        pool
    }

    /// Adds a point unless it is out of range or within [`DEDUP_DISTANCE`]
    /// of a point already in the pool. Returns whether it was added.
    pub fn push(&mut self, p: Point2, provenance: Provenance, meta: impl Into<String>) -> bool {
        let in_range = p.is_finite() && (0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y);
        if !in_range || self.points.iter().any(|q| q.distance(p) < DEDUP_DISTANCE) {
            return false;
        }
        self.points.push(p);
        self.provenance.push(provenance);
        self.source_meta.push(meta.into());
        true
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Point2> {
        if self.is_empty() {
            return None;
        }
        let n = self.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Some(Point2::new(sx / n, sy / n))
    }

    /// Smallest distance between two pool points, `None` below two points.
    pub fn min_pairwise_distance(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                let d = p.distance(*q);
                best = Some(best.map_or(d, |b| b.min(d)));
            }
        }
        best
    }
}

impl Default for KeypointPool {
    fn default() -> Self {
        Self::new()
    }
}

/// How many strokes each round gets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbstractionConfig {
    pub n_face: usize,
    pub n_contour: usize,
    pub seed: u64,
}

impl AbstractionConfig {
    pub fn new(n_face: usize, n_contour: usize, seed: u64) -> Result<Self> {
        let cfg = AbstractionConfig { n_face, n_contour, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Splits a budget of `total` strokes evenly, the odd stroke going to the face.
    pub fn even_split(total: usize, seed: u64) -> Result<Self> {
        Self::new(total - total / 2, total / 2, seed)
    }

    pub fn total(&self) -> usize {
        self.n_face + self.n_contour
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_face == 0 {
            return Err(Error::invalid("face stroke count", "N_f must be at least 1"));
        }
        Ok(())
    }
}

fn dist2(a: Point2, b: Point2) -> f64 {
    (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y)
}

/// Greedy farthest point sampling. Returns pool indices in selection order.
///
/// The first pick is the pool point nearest the centroid; each later pick
/// maximizes the distance to its nearest already-selected point. Ties go to
/// the lowest pool index.
pub fn fps_select(pool: &KeypointPool, n: usize) -> Result<Vec<usize>> {
    if n > pool.len() {
        return Err(Error::PoolExhausted { requested: n, available: pool.len() });
    }
    let Some(centroid) = pool.centroid() else {
        return Ok(Vec::new());
    };
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut first = 0;
    for (i, p) in pool.points.iter().enumerate() {
        if dist2(*p, centroid) < dist2(pool.points[first], centroid) {
            first = i;
        }
    }

    let mut selected = Vec::with_capacity(n);
    let mut taken = vec![false; pool.len()];
    let mut nearest = vec![f64::INFINITY; pool.len()];
    let mut next = first;
    while selected.len() < n {
        selected.push(next);
        taken[next] = true;
        let chosen = pool.points[next];
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in pool.points.iter().enumerate() {
            nearest[i] = nearest[i].min(dist2(*p, chosen));
            if !taken[i] && best.is_none_or(|(_, d)| nearest[i] > d) {
                best = Some((i, nearest[i]));
            }
        }
        match best {
            Some((i, _)) => next = i,
            None => break,
        }
    }
    Ok(selected)
}

/// [`fps_select`] returning the points themselves.
pub fn fps_points(pool: &KeypointPool, n: usize) -> Result<Vec<Point2>> {
    Ok(fps_select(pool, n)?.into_iter().map(|i| pool.points[i]).collect())
}

/// Largest distance from any pool point to its nearest selected point.
pub fn covering_radius(pool: &KeypointPool, selected: &[usize]) -> f64 {
    pool.points
        .iter()
        .map(|p| selected.iter().map(|&s| dist2(*p, pool.points[s])).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
        .sqrt()
}

/// One stroke per seed: the first control point is the seed and the other
/// three are the seed plus independent uniform offsets in
/// `[-INIT_OFFSET, INIT_OFFSET]²`.
pub fn init_strokes(seeds: &[Point2], tag: RoundTag, seed: u64) -> Vec<Stroke> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    seeds
        .iter()
        .map(|&p| {
            let mut offset = || {
                Point2::new(
                    p.x + rng.gen_range(-INIT_OFFSET..=INIT_OFFSET),
                    p.y + rng.gen_range(-INIT_OFFSET..=INIT_OFFSET),
                )
            };
            let mut stroke = Stroke::new([p, offset(), offset(), offset()], tag);
            stroke.control_points[0] = p;
            stroke
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(points: &[(f64, f64)]) -> KeypointPool {
        KeypointPool::from_points(
            points.iter().enumerate().map(|(i, &(x, y))| (Point2::new(x, y), Provenance::ContourEdge, i.to_string())),
        )
    }

    #[test]
    fn pool_drops_duplicates_and_out_of_range() {
        let p = pool(&[(0.5, 0.5), (0.50001, 0.5), (1.2, 0.3), (0.2, 0.2)]);
        assert_eq!(p.len(), 2);
        assert!(p.min_pairwise_distance().unwrap() >= DEDUP_DISTANCE);
    }

    #[test]
    fn single_pick_is_nearest_to_centroid() {
        let p = pool(&[(0.0, 0.0), (1.0, 0.0), (0.45, 0.1), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(fps_select(&p, 1).unwrap(), vec![2]);
    }

    #[test]
    fn full_selection_covers_pool() {
        let p = pool(&[(0.1, 0.1), (0.9, 0.2), (0.5, 0.5), (0.3, 0.8)]);
        let mut sel = fps_select(&p, 4).unwrap();
        sel.sort();
        assert_eq!(sel, vec![0, 1, 2, 3]);
        assert_eq!(covering_radius(&p, &sel), 0.0);
    }

    #[test]
    fn symmetric_ties_pick_lowest_index() {
        // Centre first, then the corners all tie at every step.
        let p = pool(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)]);
        assert_eq!(fps_select(&p, 3).unwrap(), vec![4, 0, 1]);
    }

    #[test]
    fn exhausted_pool_names_both_sizes() {
        let err = fps_select(&pool(&[(0.1, 0.1)]), 3).unwrap_err();
        assert!(matches!(err, Error::PoolExhausted { requested: 3, available: 1 }));
        assert!(err.to_string().contains("pool exhausted"));
    }

    #[test]
    fn init_strokes_start_at_seeds() {
        let seeds = [Point2::new(0.2, 0.3), Point2::new(0.0, 1.0)];
        let a = init_strokes(&seeds, RoundTag::Face, 9);
        assert_eq!(a, init_strokes(&seeds, RoundTag::Face, 9));
        for (s, p) in a.iter().zip(&seeds) {
            assert_eq!(s.control_points[0], *p);
            assert_eq!(s.round_tag, RoundTag::Face);
        }
    }

    #[test]
    fn abstraction_split() {
        let c = AbstractionConfig::even_split(41, 0).unwrap();
        assert_eq!((c.n_face, c.n_contour), (21, 20));
        assert!(AbstractionConfig::new(0, 4, 0).is_err());
    }
}
