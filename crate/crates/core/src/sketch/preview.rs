//! Non-differentiable preview rendering through tiny-skia.

use tiny_skia::{Color, LineCap, LineJoin, Paint, PathBuilder, Pixmap, Stroke as SkStroke, Transform};

use super::SketchCanvas;
use crate::error::{Error, Result};
use crate::raster::RasterImage;

/// Anti-aliased RGB raster of the sketch on a white background.
pub fn raster_preview(canvas: &SketchCanvas) -> Result<RasterImage> {
    canvas.validate()?;
    let (w, h) = (canvas.width_px, canvas.height_px);
    let mut pixmap = Pixmap::new(w, h).ok_or_else(|| Error::invalid("canvas size", format!("{w}x{h}")))?;
    pixmap.fill(Color::WHITE);

    let (wf, hf) = (w as f32, h as f32);
    for stroke in &canvas.strokes {
        let p = stroke.control_points.map(|p| (p.x as f32 * wf, p.y as f32 * hf));
        let mut pb = PathBuilder::new();
        pb.move_to(p[0].0, p[0].1);
        pb.cubic_to(p[1].0, p[1].1, p[2].0, p[2].1, p[3].0, p[3].1);
        let Some(path) = pb.finish() else { continue };

        let mut paint = Paint::default();
        paint.anti_alias = true;
        let [r, g, b] = stroke.color.map(|c| c as f32);
        paint.set_color(Color::from_rgba(r, g, b, stroke.opacity as f32).unwrap_or(Color::BLACK));
        let sk = SkStroke {
            width: canvas.width_to_px(stroke.width) as f32,
            line_cap: LineCap::Round,
            line_join: LineJoin::Round,
            ..SkStroke::default()
        };
        pixmap.stroke_path(&path, &paint, &sk, Transform::identity(), None);
    }

    let data = pixmap
        .pixels()
        .iter()
        .flat_map(|px| {
            let c = px.demultiply();
            [c.red(), c.green(), c.blue()].map(|v| v as f64 / 255.0)
        })
        .collect();
    RasterImage::from_vec(w as usize, h as usize, 3, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point2, RoundTag, Stroke};

    #[test]
    fn degenerate_center_stroke_is_local() {
        let c = SketchCanvas::with_strokes(64, 64, vec![Stroke::new([Point2::new(0.5, 0.5); 4], RoundTag::Face)]);
        let img = raster_preview(&c).unwrap();
        let reach = c.width_to_px(c.strokes[0].width) / 2.0 + 1.0;
        for y in 0..64 {
            for x in 0..64 {
                if img.get(x, y, 0) < 1.0 {
                    let d = ((x as f64 + 0.5 - 32.0).powi(2) + (y as f64 + 0.5 - 32.0).powi(2)).sqrt();
                    assert!(d <= reach + 0.5, "pixel ({x},{y}) darkened at distance {d}");
                }
            }
        }
    }

    #[test]
    fn offscreen_strokes_leave_white() {
        let c = SketchCanvas::with_strokes(32, 32, vec![Stroke::new([Point2::new(-0.1, -0.1); 4], RoundTag::Face)]);
        let img = raster_preview(&c).unwrap();
        assert!(img.data().iter().all(|&v| v == 1.0));
    }
}
