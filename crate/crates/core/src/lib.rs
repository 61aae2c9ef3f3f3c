//! Vector portrait sketches from face photographs.
//!
//! A sketch is a set of cubic Bézier strokes optimized in two rounds
//! through a differentiable rasterizer: strokes seeded on facial landmarks
//! are fitted to the photo under a semantic embedding loss, then strokes
//! seeded on face-parsing contours are superimposed and fitted under a
//! structure loss and a crop-based shadow loss.

pub mod error;
pub mod eval;
pub mod keypoints;
pub mod losses;
pub mod nn;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod sketch;
pub mod synthetic;
pub mod weights;

pub use error::{Error, Result};
pub use raster::RasterImage;
pub use sketch::{Point2, RoundTag, SketchCanvas, Stroke};
