//! Face parsing into attribute labels and the masked composite.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Background,
    Skin,
    Nose,
    Eyes,
    Eyebrows,
    Ears,
    Lips,
    Hair,
    Hat,
    Glasses,
    Neck,
}

impl Label {
    pub const ALL: [Label; 11] = [
        Label::Background,
        Label::Skin,
        Label::Nose,
        Label::Eyes,
        Label::Eyebrows,
        Label::Ears,
        Label::Lips,
        Label::Hair,
        Label::Hat,
        Label::Glasses,
        Label::Neck,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }
}

/// Per-pixel attribute labels plus the photo with background pixels
/// replaced by pure white.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage {
    width: usize,
    height: usize,
    labels: Vec<Label>,
    composite: RasterImage,
}

impl MaskImage {
    /// Masks `photo` with `labels` (row-major, one per pixel).
    pub fn new(photo: &RasterImage, labels: Vec<Label>) -> Result<Self> {
        let (w, h) = (photo.width(), photo.height());
        if labels.len() != w * h {
            return Err(Error::ShapeMismatch {
                expected: format!("{} labels for {w}x{h}", w * h),
                actual: format!("{} labels", labels.len()),
            });
        }
        let rgb = photo.to_rgb();
        let composite =
            RasterImage::from_fn(
                w,
                h,
                3,
                |x, y, c| {
                    if labels[y * w + x] == Label::Background {
                        1.0
                    } else {
                        rgb.get(x, y, c)
                    }
                },
            );
        Ok(MaskImage { width: w, height: h, labels, composite })
    }

    /// Labels only; the composite paints each foreground label in a flat gray.
    pub fn from_labels(width: usize, height: usize, labels: Vec<Label>) -> Result<Self> {
        let photo = RasterImage::filled(width, height, 3, 0.5);
        Self::new(&photo, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> Label {
        self.labels[y * self.width + x]
    }

    pub fn composite(&self) -> &RasterImage {
        &self.composite
    }

    pub fn foreground_fraction(&self) -> f64 {
        let fg = self.labels.iter().filter(|&&l| l != Label::Background).count();
        fg as f64 / self.labels.len().max(1) as f64
    }

    /// True when a 4-neighbour of `(x, y)` carries a different label.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        let l = self.label(x, y);
        (x > 0 && self.label(x - 1, y) != l)
            || (y > 0 && self.label(x, y - 1) != l)
            || (x + 1 < self.width && self.label(x + 1, y) != l)
            || (y + 1 < self.height && self.label(x, y + 1) != l)
    }
}

/// A face parsing model: one label per pixel of `image`.
pub trait FaceParser: Send + Sync {
    fn parse(&self, image: &RasterImage) -> Result<Vec<Label>>;
}

/// Parses `image` and builds the masked composite.
pub fn parse_face(image: &RasterImage, parser: &dyn FaceParser) -> Result<MaskImage> {
    let labels = parser.parse(image)?;
    if !labels.contains(&Label::Skin) {
        return Err(Error::NoFaceFound);
    }
    let mask = MaskImage::new(image, labels)?;
    if !mask.labels.contains(&Label::Background) {
        return Err(Error::invalid("face mask", "no background pixels"));
    }
    Ok(mask)
}

/// Nearest-colour parser: each pixel takes the label of the closest palette
/// colour if it lies within `tolerance` (Euclidean RGB), else background.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaletteParser {
    pub tolerance: f64,
    pub palette: Vec<(Label, [f64; 3])>,
}

impl PaletteParser {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let parser: PaletteParser = serde_json::from_str(&text)
            .map_err(|e| Error::BadWeights { path: path.to_path_buf(), message: e.to_string() })?;
        if !(parser.tolerance > 0.0) || parser.palette.is_empty() {
            return Err(Error::BadWeights {
                path: path.to_path_buf(),
                message: "needs a positive tolerance and a non-empty palette".into(),
            });
        }
        Ok(parser)
    }
}

impl FaceParser for PaletteParser {
    fn parse(&self, image: &RasterImage) -> Result<Vec<Label>> {
        let rgb = image.to_rgb();
        let tol2 = self.tolerance * self.tolerance;
        Ok(rgb
            .data()
            .chunks_exact(3)
            .map(|px| {
                let mut best = (Label::Background, tol2);
                for &(label, c) in &self.palette {
                    let d2 = (px[0] - c[0]).powi(2) + (px[1] - c[1]).powi(2) + (px[2] - c[2]).powi(2);
                    if d2 <= best.1 {
                        best = (label, d2);
                    }
                }
                best.0
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parser() -> PaletteParser {
        PaletteParser { tolerance: 0.1, palette: vec![(Label::Skin, [0.9, 0.7, 0.6]), (Label::Hair, [0.2, 0.1, 0.1])] }
    }

    #[test]
    fn composite_background_is_exactly_white() {
        let photo = RasterImage::from_fn(4, 1, 3, |x, _, _| if x < 2 { 0.3 } else { 0.7 });
        let labels = vec![Label::Skin, Label::Skin, Label::Background, Label::Background];
        let mask = MaskImage::new(&photo, labels).unwrap();
        assert_eq!(mask.composite().get(0, 0, 0), 0.3);
        assert!((0..3).all(|c| mask.composite().get(3, 0, c) == 1.0));
        assert_eq!(mask.foreground_fraction(), 0.5);
    }

    #[test]
    fn all_white_image_has_no_face() {
        let err = parse_face(&RasterImage::white(8, 8), &parser()).unwrap_err();
        assert!(matches!(err, Error::NoFaceFound));
    }

    #[test]
    fn palette_picks_nearest_within_tolerance() {
        let photo = RasterImage::from_vec(3, 1, 3, vec![0.88, 0.71, 0.6, 0.22, 0.1, 0.1, 0.5, 0.5, 0.5]).unwrap();
        assert_eq!(parser().parse(&photo).unwrap(), vec![Label::Skin, Label::Hair, Label::Background]);
    }
}
