//! A procedural frontal face and the toy model files built around it.
//!
//! The face is drawn from flat-coloured regions, one colour per parsing
//! label, with a little seeded noise. The toy landmarker and parser are fitted to
//! this drawing, and the toy encoders are small random conv nets. Together
//! they let the whole pipeline run without any downloaded weights.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::keypoints::{Label, PaletteParser, TemplateLandmarker, LANDMARK_COUNT};
use crate::nn::{Architecture, ConvSpec, Encoder};
use crate::raster::RasterImage;
use crate::sketch::Point2;
use crate::weights::{LANDMARKER_FILE, PARSER_FILE, SEMANTIC_FILE, STRUCTURE_FILE};

/// Seed of the bundled face image.
pub const FACE_SEED: u64 = 2024;

/// Per-channel noise amplitude of the drawing.
const NOISE: f64 = 0.015;

pub const BACKGROUND_RGB: [f64; 3] = [0.85, 0.90, 0.95];

/// Flat colour of every foreground label that appears in the drawing.
pub const PALETTE: [(Label, [f64; 3]); 9] = [
    (Label::Skin, [0.92, 0.76, 0.64]),
    (Label::Nose, [0.84, 0.62, 0.52]),
    (Label::Ears, [0.96, 0.62, 0.60]),
    (Label::Neck, [0.70, 0.54, 0.40]),
    (Label::Lips, [0.75, 0.30, 0.35]),
    (Label::Eyes, [0.12, 0.14, 0.22]),
    (Label::Eyebrows, [0.40, 0.26, 0.18]),
    (Label::Hair, [0.22, 0.14, 0.10]),
    (Label::Glasses, [0.10, 0.35, 0.15]),
];

fn colour(label: Label) -> [f64; 3] {
    PALETTE.iter().find(|(l, _)| *l == label).map_or(BACKGROUND_RGB, |(_, c)| *c)
}

const FACE_C: (f64, f64) = (0.5, 0.5);
const FACE_R: (f64, f64) = (0.25, 0.32);

fn in_ellipse(x: f64, y: f64, c: (f64, f64), r: (f64, f64)) -> bool {
    ((x - c.0) / r.0).powi(2) + ((y - c.1) / r.1).powi(2) <= 1.0
}

/// Label of the drawing at normalized position `(x, y)`; later regions
/// paint over earlier ones.
pub fn label_at(x: f64, y: f64) -> Label {
    let mut label = Label::Background;
    if in_ellipse(x, y, (0.5, 0.45), (0.30, 0.35)) && y < 0.45 {
        label = Label::Hair;
    }
    if (0.40..=0.60).contains(&x) && y >= 0.70 {
        label = Label::Neck;
    }
    if in_ellipse(x, y, (0.24, 0.52), (0.035, 0.07)) || in_ellipse(x, y, (0.76, 0.52), (0.035, 0.07)) {
        label = Label::Ears;
    }
    if in_ellipse(x, y, FACE_C, FACE_R) {
        label = if y < 0.27 { Label::Hair } else { Label::Skin };
    }
    if in_ellipse(x, y, (0.40, 0.39), (0.07, 0.015)) || in_ellipse(x, y, (0.60, 0.39), (0.07, 0.015)) {
        label = Label::Eyebrows;
    }
    if in_ellipse(x, y, (0.40, 0.45), (0.05, 0.022)) || in_ellipse(x, y, (0.60, 0.45), (0.05, 0.022)) {
        label = Label::Eyes;
    }
    if in_ellipse(x, y, (0.5, 0.55), (0.04, 0.07)) {
        label = Label::Nose;
    }
    if in_ellipse(x, y, (0.5, 0.68), (0.09, 0.03)) {
        label = Label::Lips;
    }
    label
}

/// Ground-truth label map at `size`×`size`, sampled at pixel centres.
pub fn face_labels(size: usize) -> Vec<Label> {
    let s = size as f64;
    (0..size * size).map(|i| label_at(((i % size) as f64 + 0.5) / s, ((i / size) as f64 + 0.5) / s)).collect()
}

/// The face drawing at `size`×`size` with seeded noise.
pub fn synthetic_face(size: usize, seed: u64) -> RasterImage {
    let labels = face_labels(size);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RasterImage::filled(size, size, 3, 0.0);
    for (i, px) in img.data_mut().chunks_exact_mut(3).enumerate() {
        let base = colour(labels[i]);
        for c in 0..3 {
            px[c] = (base[c] + rng.gen_range(-NOISE..=NOISE)).clamp(0.0, 1.0);
        }
    }
    img
}

fn ellipse_point(c: (f64, f64), r: (f64, f64), phi: f64) -> Point2 {
    Point2::new(c.0 + r.0 * phi.cos(), c.1 + r.1 * phi.sin())
}

/// The 68 landmarks of the drawing in normalized image coordinates.
pub fn face_landmarks() -> Vec<Point2> {
    use std::f64::consts::PI;
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    // Jaw, from the left temple under the chin to the right temple.
    for i in 0..17 {
        let phi = (PI + 0.2) - i as f64 * (PI + 0.4) / 16.0;
        pts.push(ellipse_point(FACE_C, FACE_R, phi));
    }
    // Brows along their upper edges.
    for cx in [0.40, 0.60] {
        for i in 0..5 {
            let phi = PI + (i as f64 + 0.5) * PI / 5.0;
            pts.push(ellipse_point((cx, 0.39), (0.07, 0.015), phi));
        }
    }
    for i in 0..4 {
        pts.push(Point2::new(0.5, 0.47 + 0.035 * i as f64));
    }
    for i in 0..5 {
        let dx = (i as f64 - 2.0) * 0.0175;
        pts.push(Point2::new(0.5 + dx, 0.605 + 0.005 * (1.0 - (dx / 0.035).abs())));
    }
    // Eyes: corner, two upper, corner, two lower.
    for cx in [0.40, 0.60] {
        for phi in [PI, 4.0 * PI / 3.0, 5.0 * PI / 3.0, 0.0, PI / 3.0, 2.0 * PI / 3.0] {
            pts.push(ellipse_point((cx, 0.45), (0.05, 0.022), phi));
        }
    }
    for j in 0..12 {
        pts.push(ellipse_point((0.5, 0.68), (0.09, 0.03), PI + j as f64 * PI / 6.0));
    }
    for j in 0..8 {
        pts.push(ellipse_point((0.5, 0.68), (0.06, 0.012), PI + j as f64 * PI / 4.0));
    }
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

pub fn toy_parser() -> PaletteParser {
    PaletteParser { tolerance: 0.07, palette: PALETTE.to_vec() }
}

/// Template landmarker whose mean shape is the drawing's landmarks relative
/// to the skin region it finds in the 224 px drawing.
pub fn toy_landmarker() -> Result<TemplateLandmarker> {
    let mut model = TemplateLandmarker {
        skin_rgb: colour(Label::Skin),
        tolerance: 0.07,
        min_area_frac: 0.05,
        min_fill: 0.5,
        mean_shape: Vec::new(),
    };
    let size = 224;
    let (x0, y0, x1, y1) = model.face_box(&synthetic_face(size, FACE_SEED))?;
    let s = size as f64;
    let (bx, by, bw, bh) = (x0 as f64 / s, y0 as f64 / s, (x1 + 1 - x0) as f64 / s, (y1 + 1 - y0) as f64 / s);
    model.mean_shape = face_landmarks().iter().map(|p| [(p.x - bx) / bw, (p.y - by) / bh]).collect();
    Ok(model)
}

fn toy_architecture(taps: Vec<usize>) -> Architecture {
    let conv = |i, o| ConvSpec { in_channels: i, out_channels: o, kernel: 3, stride: 2, padding: 1 };
    Architecture { blocks: vec![conv(3, 4), conv(4, 8), conv(8, 8), conv(8, 16)], taps }
}

/// Four stride-2 conv blocks, taps 2–4, a 16-d projection head and the
/// usual contrastive image-model input statistics.
pub fn toy_semantic_encoder() -> Result<Encoder> {
    Encoder::random(
        toy_architecture(vec![2, 3, 4]),
        [0.48145466, 0.4578275, 0.40821073],
        [0.26862954, 0.26130258, 0.27577711],
        Some(16),
        false,
        11,
    )
}

/// Four stride-2 conv blocks, taps 1–4 with positive channel weights and
/// ImageNet input statistics.
pub fn toy_structure_encoder() -> Result<Encoder> {
    Encoder::random(toy_architecture(vec![1, 2, 3, 4]), [0.485, 0.456, 0.406], [0.229, 0.224, 0.225], None, true, 12)
}

/// Writes the four toy model files into `dir`.
pub fn write_toy_weights(dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    toy_semantic_encoder()?.save(dir.join(SEMANTIC_FILE))?;
    toy_structure_encoder()?.save(dir.join(STRUCTURE_FILE))?;
    std::fs::write(dir.join(LANDMARKER_FILE), serde_json::to_string_pretty(&toy_landmarker()?)? + "\n")?;
    std::fs::write(dir.join(PARSER_FILE), serde_json::to_string_pretty(&toy_parser())? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_colours_are_separable() {
        // Noise moves a pixel by at most sqrt(3) * NOISE, which must stay
        // inside the tolerance and closer to its own colour than any other.
        let shift = 3f64.sqrt() * NOISE;
        assert!(shift < toy_parser().tolerance);
        let mut all = PALETTE.iter().map(|(_, c)| *c).collect::<Vec<_>>();
        all.push(BACKGROUND_RGB);
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                let d = (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>().sqrt();
                assert!(d > 2.0 * shift, "{a:?} {b:?} {d}");
            }
        }
    }

    #[test]
    fn landmarks_lie_on_the_face() {
        for p in face_landmarks() {
            assert!(in_ellipse(p.x, p.y, FACE_C, (FACE_R.0 + 1e-9, FACE_R.1 + 1e-9)));
        }
    }
}
