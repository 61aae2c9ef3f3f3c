//! Vector sketch data model.
//!
//! A sketch is an ordered list of cubic Bézier strokes on a canvas. Control
//! points live in normalized `[0, 1]` coordinates (x to the right, y down);
//! writes clamp them to `[COORD_MIN, COORD_MAX]` so strokes can leave the
//! visible area without being pinned to its border. Only control points are
//! optimized; the style fields are edited after the fact with
//! [`apply_style`].

mod preview;
mod style;
mod svg;

use serde::{Deserialize, Serialize};

pub use preview::raster_preview;
pub use style::{apply_style, StrokeStyle, StyleSpec};
pub use svg::{parse_svg, render_svg};

use crate::error::{Error, Result};

pub const COORD_MIN: f64 = -0.1;
pub const COORD_MAX: f64 = 1.1;

/// 1.5 px at the 224 px working resolution.
pub const DEFAULT_WIDTH: f64 = 1.5 / 224.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn clamped(self) -> Self {
        Point2 { x: self.x.clamp(COORD_MIN, COORD_MAX), y: self.y.clamp(COORD_MIN, COORD_MAX) }
    }

    pub fn distance(self, other: Point2) -> f64 {
        let (dx, dy) = (self.x - other.x, self.y - other.y);
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Which optimization round introduced a stroke.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundTag {
    Face,
    Contour,
}

impl RoundTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RoundTag::Face => "face",
            RoundTag::Contour => "contour",
        }
    }
}

impl std::str::FromStr for RoundTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "face" => Ok(RoundTag::Face),
            "contour" => Ok(RoundTag::Contour),
            other => Err(Error::invalid("round tag", format!("'{other}' (expected face or contour)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub control_points: [Point2; 4],
    /// Stroke width in normalized units of the canvas width.
    pub width: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    pub round_tag: RoundTag,
}

impl Stroke {
    /// A stroke with the default black, opaque style.
    pub fn new(control_points: [Point2; 4], round_tag: RoundTag) -> Self {
        Stroke {
            control_points: control_points.map(Point2::clamped),
            width: DEFAULT_WIDTH,
            color: [0.0; 3],
            opacity: 1.0,
            round_tag,
        }
    }

    /// Point on the curve at parameter `t` in `[0, 1]`.
    pub fn eval(&self, t: f64) -> Point2 {
        let b = bernstein(t);
        let p = &self.control_points;
        Point2 {
            x: b[0] * p[0].x + b[1] * p[1].x + b[2] * p[2].x + b[3] * p[3].x,
            y: b[0] * p[0].y + b[1] * p[1].y + b[2] * p[2].y + b[3] * p[3].y,
        }
    }

    pub fn set_point(&mut self, j: usize, p: Point2) {
        self.control_points[j] = p.clamped();
    }

    pub fn validate(&self) -> Result<()> {
        if !self.control_points.iter().all(|p| p.is_finite()) {
            return Err(Error::invalid("stroke", "non-finite control point"));
        }
        validate_style(self.width, self.color, self.opacity)
    }
}

pub(crate) fn validate_style(width: f64, color: [f64; 3], opacity: f64) -> Result<()> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::invalid("stroke width", format!("{width} (must be positive)")));
    }
    if !color.iter().all(|c| (0.0..=1.0).contains(c)) {
        return Err(Error::invalid("stroke color", format!("{color:?} (components must lie in [0, 1])")));
    }
    if !(0.0..=1.0).contains(&opacity) {
        return Err(Error::invalid("stroke opacity", format!("{opacity} (must lie in [0, 1])")));
    }
    Ok(())
}

/// Cubic Bernstein basis at `t`.
#[inline]
pub fn bernstein(t: f64) -> [f64; 4] {
    let s = 1.0 - t;
    [s * s * s, 3.0 * s * s * t, 3.0 * s * t * t, t * t * t]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchCanvas {
    pub strokes: Vec<Stroke>,
    pub width_px: u32,
    pub height_px: u32,
}

impl SketchCanvas {
    pub fn new(width_px: u32, height_px: u32) -> Self {
        SketchCanvas { strokes: Vec::new(), width_px, height_px }
    }

    pub fn with_strokes(width_px: u32, height_px: u32, strokes: Vec<Stroke>) -> Self {
        SketchCanvas { strokes, width_px, height_px }
    }

    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    pub fn count_tagged(&self, tag: RoundTag) -> usize {
        self.strokes.iter().filter(|s| s.round_tag == tag).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_px == 0 || self.height_px == 0 {
            return Err(Error::invalid("canvas size", format!("{}x{}", self.width_px, self.height_px)));
        }
        self.strokes.iter().try_for_each(Stroke::validate)
    }

    /// True when both canvases have bit-identical control points.
    pub fn same_geometry(&self, other: &SketchCanvas) -> bool {
        self.strokes.len() == other.strokes.len()
            && self.strokes.iter().zip(&other.strokes).all(|(a, b)| {
                a.control_points
                    .iter()
                    .zip(&b.control_points)
                    .all(|(p, q)| p.x.to_bits() == q.x.to_bits() && p.y.to_bits() == q.y.to_bits())
            })
    }

    /// Stroke width in pixels for a normalized width.
    pub fn width_to_px(&self, width: f64) -> f64 {
        width * self.width_px as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernstein_partition_of_unity() {
        for i in 0..=10 {
            let b = bernstein(i as f64 / 10.0);
            assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn stroke_endpoints() {
        let s = Stroke::new(
            [Point2::new(0.1, 0.2), Point2::new(0.3, 0.4), Point2::new(0.5, 0.6), Point2::new(0.7, 0.8)],
            RoundTag::Face,
        );
        assert_eq!(s.eval(0.0), Point2::new(0.1, 0.2));
        let end = s.eval(1.0);
        assert!((end.x - 0.7).abs() < 1e-15 && (end.y - 0.8).abs() < 1e-15);
    }

    #[test]
    fn new_stroke_clamps() {
        let s = Stroke::new([Point2::new(-5.0, 2.0); 4], RoundTag::Contour);
        assert_eq!(s.control_points[0], Point2::new(COORD_MIN, COORD_MAX));
    }

    #[test]
    fn invalid_style_rejected() {
        let mut s = Stroke::new([Point2::new(0.5, 0.5); 4], RoundTag::Face);
        s.opacity = 1.5;
        assert!(s.validate().is_err());
        s.opacity = 1.0;
        s.width = 0.0;
        assert!(s.validate().is_err());
    }
}
