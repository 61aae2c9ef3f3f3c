use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_style, SketchCanvas};
use crate::error::{Error, Result};

/// Style fields to set; `None` keeps the stroke's current value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrokeStyle {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opacity: Option<f64>,
}

/// A brush style applied to a finished sketch: a base style for every
/// stroke plus per-stroke overrides keyed by stroke index. Widths are in
/// normalized canvas-width units.
///
/// ```json
/// { "width": 0.0134, "color": [0.1, 0.1, 0.4], "overrides": { "3": { "opacity": 0.5 } } }
/// ```
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StyleSpec {
    #[serde(flatten)]
    pub base: StrokeStyle,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<usize, StrokeStyle>,
}

impl StyleSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<StyleSpec> {
        let spec: StyleSpec = serde_json::from_slice(&std::fs::read(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        std::iter::once(&self.base).chain(self.overrides.values()).try_for_each(|s| {
            validate_style(s.width.unwrap_or(1.0), s.color.unwrap_or([0.0; 3]), s.opacity.unwrap_or(1.0))
        })
    }
}

/// Returns a copy of `canvas` with the style applied. Control points are
/// copied untouched.
pub fn apply_style(canvas: &SketchCanvas, style: &StyleSpec) -> Result<SketchCanvas> {
    style.validate()?;
    if let Some((&index, _)) = style.overrides.range(canvas.len()..).next() {
        return Err(Error::StyleIndex { index, len: canvas.len() });
    }
    let mut out = canvas.clone();
    for (i, stroke) in out.strokes.iter_mut().enumerate() {
        for s in std::iter::once(&style.base).chain(style.overrides.get(&i)) {
            if let Some(w) = s.width {
                stroke.width = w;
            }
            if let Some(c) = s.color {
                stroke.color = c;
            }
            if let Some(o) = s.opacity {
                stroke.opacity = o;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::{Point2, RoundTag, Stroke, DEFAULT_WIDTH};

    fn canvas(n: usize) -> SketchCanvas {
        let strokes = (0..n)
            .map(|i| {
                let v = 0.1 + 0.15 * i as f64;
                Stroke::new(
                    [Point2::new(v, 0.2), Point2::new(v + 0.01, 0.3), Point2::new(v, 0.4), Point2::new(v + 0.02, 0.5)],
                    RoundTag::Face,
                )
            })
            .collect();
        SketchCanvas::with_strokes(224, 224, strokes)
    }

    #[test]
    fn identity_style_is_identity() {
        let c = canvas(5);
        let style = StyleSpec {
            base: StrokeStyle { width: Some(DEFAULT_WIDTH), color: Some([0.0; 3]), opacity: Some(1.0) },
            overrides: BTreeMap::new(),
        };
        assert_eq!(apply_style(&c, &style).unwrap(), c);
        assert_eq!(apply_style(&c, &StyleSpec::default()).unwrap(), c);
    }

    #[test]
    fn doubled_width_keeps_geometry() {
        let c = canvas(5);
        let style = StyleSpec {
            base: StrokeStyle { width: Some(2.0 * DEFAULT_WIDTH), ..Default::default() },
            ..Default::default()
        };
        let out = apply_style(&c, &style).unwrap();
        assert!(out.same_geometry(&c));
        assert!(out.strokes.iter().zip(&c.strokes).all(|(a, b)| a.width == 2.0 * b.width));
    }

    #[test]
    fn override_touches_only_its_stroke() {
        let c = canvas(5);
        let mut style = StyleSpec::default();
        style
            .overrides
            .insert(3, StrokeStyle { opacity: Some(0.5), color: Some([1.0, 0.0, 0.0]), ..Default::default() });
        let out = apply_style(&c, &style).unwrap();
        for (i, (a, b)) in out.strokes.iter().zip(&c.strokes).enumerate() {
            let changed = a != b;
            assert_eq!(changed, i == 3, "stroke {i}");
        }
        assert_eq!(out.strokes[3].opacity, 0.5);
        assert_eq!(out.strokes[3].width, c.strokes[3].width);
    }

    #[test]
    fn out_of_range_override_rejected() {
        let mut style = StyleSpec::default();
        style.overrides.insert(5, StrokeStyle::default());
        assert!(matches!(apply_style(&canvas(5), &style), Err(Error::StyleIndex { index: 5, len: 5 })));
    }

    #[test]
    fn style_json_parses() {
        let json = r#"{"width": 0.01, "overrides": {"2": {"opacity": 0.3}}}"#;
        let spec: StyleSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.base.width, Some(0.01));
        assert_eq!(spec.overrides[&2].opacity, Some(0.3));
    }
}
