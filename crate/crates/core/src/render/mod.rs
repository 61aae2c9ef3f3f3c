//! Differentiable rasterization.
//!
//! A [`Rasterizer`] renders a [`SketchCanvas`] to an RGB [`RasterImage`] and
//! maps a per-pixel loss gradient back onto every control point. The
//! built-in backend is [`SoftRasterizer`]; [`gradient_check`] compares any
//! backend's adjoint against central finite differences.

mod reference;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use reference::SoftRasterizer;

use crate::error::{Error, Result};
use crate::raster::{PixelGradient, RasterImage};
use crate::sketch::SketchCanvas;

/// d(loss)/d(control point) per stroke, in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradients {
    pub points: Vec<[[f64; 2]; 4]>,
}

impl RenderGradients {
    pub fn zeros(strokes: usize) -> Self {
        RenderGradients { points: vec![[[0.0; 2]; 4]; strokes] }
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.points.iter().flatten().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Flattened in (stroke, point, axis) order.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().flatten().copied().collect()
    }
}

pub trait Rasterizer: Send + Sync {
    fn name(&self) -> &'static str;

    fn forward(&self, canvas: &SketchCanvas) -> Result<RasterImage>;

    /// Gradient of the scalar loss whose pixel gradient is `pixel_grad`.
    fn backward(&self, canvas: &SketchCanvas, pixel_grad: &PixelGradient) -> Result<RenderGradients>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Reference,
}

impl BackendKind {
    pub fn create(self) -> Box<dyn Rasterizer> {
        match self {
            BackendKind::Reference => Box::new(SoftRasterizer::default()),
        }
    }
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(BackendKind::Reference),
            other => Err(Error::UnknownBackend(other.to_string())),
        }
    }
}

/// A scalar loss on images that can report its own pixel gradient.
pub trait ImageLoss {
    fn value_and_grad(&self, image: &RasterImage) -> (f64, PixelGradient);
}

/// Sum of all pixel values.
pub struct PixelSum;

impl ImageLoss for PixelSum {
    fn value_and_grad(&self, image: &RasterImage) -> (f64, PixelGradient) {
        (image.data().iter().sum(), RasterImage::filled(image.width(), image.height(), image.channels(), 1.0))
    }
}

/// Sum of squared differences to a fixed target.
pub struct SquaredError<'a>(pub &'a RasterImage);

impl ImageLoss for SquaredError<'_> {
    fn value_and_grad(&self, image: &RasterImage) -> (f64, PixelGradient) {
        let mut grad = RasterImage::zeros_like(image);
        let mut value = 0.0;
        for ((g, a), b) in grad.data_mut().iter_mut().zip(image.data()).zip(self.0.data()) {
            value += (a - b) * (a - b);
            *g = 2.0 * (a - b);
        }
        (value, grad)
    }
}

pub struct ConstantLoss(pub f64);

impl ImageLoss for ConstantLoss {
    fn value_and_grad(&self, image: &RasterImage) -> (f64, PixelGradient) {
        (self.0, RasterImage::zeros_like(image))
    }
}

/// Location of one control-point coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CoordIndex {
    pub stroke: usize,
    pub point: usize,
    pub axis: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoordCheck {
    pub index: CoordIndex,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub step: f64,
    /// Largest per-coordinate [`relative_error`].
    pub max_rel_error: f64,
    /// `|a - n| / max(|a|, |n|)` over the whole gradient vector (L2 norms).
    pub vector_rel_error: f64,
    pub max_abs_analytic: f64,
    /// Coordinate with the largest relative error, if any coordinate exists.
    pub worst: Option<CoordIndex>,
    pub coords: Vec<CoordCheck>,
}

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is floored at `1e-3` of the largest numeric derivative
/// in the same check, so coordinates whose true derivative is near zero are
/// judged on an absolute scale tied to the problem instead of blowing up.
pub fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-3 * scale).max(1e-300);
    (analytic - numeric).abs() / denom
}

/// Compares `backward` against central differences with step `step`
/// (normalized units) over every control-point coordinate.
pub fn gradient_check(
    rasterizer: &dyn Rasterizer,
    canvas: &SketchCanvas,
    loss: &dyn ImageLoss,
    step: f64,
) -> Result<CheckReport> {
    let image = rasterizer.forward(canvas)?;
    let (_, pixel_grad) = loss.value_and_grad(&image);
    let analytic = rasterizer.backward(canvas, &pixel_grad)?;

    let mut numeric = Vec::with_capacity(canvas.len() * 8);
    let mut probe = canvas.clone();
    for s in 0..canvas.len() {
        for p in 0..4 {
            for axis in 0..2 {
                let original = canvas.strokes[s].control_points[p];
                let eval = |probe: &mut SketchCanvas, delta: f64| -> Result<f64> {
                    let cp = &mut probe.strokes[s].control_points[p];
                    if axis == 0 {
                        cp.x = original.x + delta;
                    } else {
                        cp.y = original.y + delta;
                    }
                    Ok(loss.value_and_grad(&rasterizer.forward(probe)?).0)
                };
                let plus = eval(&mut probe, step)?;
                let minus = eval(&mut probe, -step)?;
                probe.strokes[s].control_points[p] = original;
                numeric.push((CoordIndex { stroke: s, point: p, axis }, (plus - minus) / (2.0 * step)));
            }
        }
    }

    let scale = numeric.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let mut coords = Vec::with_capacity(numeric.len());
    for (index, num) in numeric {
        let a = analytic.points[index.stroke][index.point][index.axis];
        coords.push(CoordCheck { index, analytic: a, numeric: num, rel_error: relative_error(a, num, scale) });
    }
    let worst = coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error));
    let norm = |f: &dyn Fn(&CoordCheck) -> f64| coords.iter().map(|c| f(c).powi(2)).sum::<f64>().sqrt();
    let diff = norm(&|c| c.analytic - c.numeric);
    let denom = norm(&|c| c.analytic).max(norm(&|c| c.numeric));
    Ok(CheckReport {
        step,
        max_rel_error: worst.map_or(0.0, |c| c.rel_error),
        vector_rel_error: if denom > 0.0 { diff / denom } else { 0.0 },
        max_abs_analytic: coords.iter().map(|c| c.analytic.abs()).fold(0.0, f64::max),
        worst: worst.map(|c| c.index),
        coords,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point2, RoundTag, Stroke};

    fn canvas() -> SketchCanvas {
        let mut s = Stroke::new(
            [Point2::new(0.2, 0.3), Point2::new(0.4, 0.1), Point2::new(0.6, 0.8), Point2::new(0.8, 0.5)],
            RoundTag::Face,
        );
        s.width = 2.0 / 32.0;
        SketchCanvas::with_strokes(32, 32, vec![s])
    }

    #[test]
    fn zero_pixel_gradient_gives_zero() {
        let c = canvas();
        let g = SoftRasterizer::default().backward(&c, &RasterImage::filled(32, 32, 3, 0.0)).unwrap();
        assert!(g.flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_shape_mismatch() {
        let err = SoftRasterizer::default().backward(&canvas(), &RasterImage::filled(31, 32, 3, 0.0));
        assert!(matches!(err, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn pixel_sum_gradient_matches_finite_differences() {
        let report = gradient_check(&SoftRasterizer::default(), &canvas(), &PixelSum, 1e-3).unwrap();
        assert!(report.vector_rel_error < 1e-2, "{report:?}");
        assert!(report.worst.is_some());
        assert_eq!(report.coords.len(), 8);
    }

    #[test]
    fn constant_loss_has_no_gradient() {
        let report = gradient_check(&SoftRasterizer::default(), &canvas(), &ConstantLoss(3.0), 1e-3).unwrap();
        assert!(report.max_abs_analytic < 1e-8);
    }

    #[test]
    fn offscreen_stroke_gets_no_gradient() {
        let mut c = canvas();
        c.strokes.push(Stroke::new(
            [Point2::new(-0.1, -0.1), Point2::new(-0.1, -0.09), Point2::new(-0.09, -0.1), Point2::new(-0.1, -0.1)],
            RoundTag::Face,
        ));
        let g = SoftRasterizer::default().backward(&c, &RasterImage::filled(32, 32, 3, 1.0)).unwrap();
        assert!(g.points[1].iter().flatten().all(|&v| v == 0.0));
        assert!(g.points[0].iter().flatten().any(|&v| v != 0.0));
    }

    #[test]
    fn unknown_backend_is_an_error() {
        assert!("reference".parse::<BackendKind>().is_ok());
        assert!(matches!("diffvg".parse::<BackendKind>(), Err(Error::UnknownBackend(_))));
    }
}
