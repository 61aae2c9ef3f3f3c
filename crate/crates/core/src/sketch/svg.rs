//! Deterministic SVG serialization of sketches.
//!
//! Output is a fixed SVG 1.1 subset: a white background `rect` followed by
//! one `path` per stroke holding a single absolute cubic segment
//! (`M x0 y0 C x1 y1, x2 y2, x3 y3`). Every number is printed with six
//! decimals, so equal canvases serialize to equal bytes. The parser accepts
//! exactly that subset and rejects anything else.

use std::fmt::Write as _;

use svgtypes::{PathParser, PathSegment};

use super::{validate_style, Point2, RoundTag, SketchCanvas, Stroke};
use crate::error::{Error, Result};

const SVG_NS: &str = "http://www.w3.org/2000/svg";

pub fn render_svg(canvas: &SketchCanvas) -> Result<String> {
    if canvas.is_empty() {
        return Err(Error::EmptySketch);
    }
    canvas.validate()?;
    let (w, h) = (canvas.width_px as f64, canvas.height_px as f64);
    let mut out = String::with_capacity(256 + 256 * canvas.len());
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        out,
        "<svg xmlns=\"{SVG_NS}\" version=\"1.1\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">",
        canvas.width_px, canvas.height_px
    );
    let _ = writeln!(out, "  <rect width=\"{}\" height=\"{}\" fill=\"#ffffff\"/>", canvas.width_px, canvas.height_px);
    for stroke in &canvas.strokes {
        let p = stroke.control_points.map(|p| (p.x * w, p.y * h));
        let _ = writeln!(
            out,
            "  <path data-round=\"{}\" d=\"M {:.6} {:.6} C {:.6} {:.6}, {:.6} {:.6}, {:.6} {:.6}\" fill=\"none\" \
             stroke=\"{}\" stroke-width=\"{:.6}\" stroke-opacity=\"{:.6}\" stroke-linecap=\"round\" stroke-linejoin=\"round\"/>",
            stroke.round_tag.as_str(),
            p[0].0,
            p[0].1,
            p[1].0,
            p[1].1,
            p[2].0,
            p[2].1,
            p[3].0,
            p[3].1,
            hex_color(stroke.color),
            stroke.width * w,
            stroke.opacity,
        );
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn parse_svg(doc: &str) -> Result<SketchCanvas> {
    if doc.trim().is_empty() {
        return Err(Error::EmptySketch);
    }
    let xml = roxmltree::Document::parse(doc).map_err(|e| Error::MalformedSvg(e.to_string()))?;
    let root = xml.root_element();
    if root.tag_name().name() != "svg" {
        return Err(Error::MalformedSvg(format!("root element is <{}>, expected <svg>", root.tag_name().name())));
    }
    let width_px = dimension(&root, "width")?;
    let height_px = dimension(&root, "height")?;
    let (w, h) = (width_px as f64, height_px as f64);

    let mut strokes = Vec::new();
    for (index, node) in root.descendants().filter(|n| n.has_tag_name("path")).enumerate() {
        let d = node.attribute("d").ok_or_else(|| Error::MalformedPath { index, message: "missing 'd'".into() })?;
        let px = parse_path_data(d, index)?;
        let control_points = px.map(|(x, y)| Point2::new(x / w, y / h));

        let round_tag = match node.attribute("data-round") {
            Some(tag) => tag.parse().map_err(|e: Error| Error::MalformedPath { index, message: e.to_string() })?,
            None => RoundTag::Face,
        };
        let width = match node.attribute("stroke-width") {
            Some(v) => number(v, index, "stroke-width")? / w,
            None => 1.0 / w,
        };
        let color = match node.attribute("stroke") {
            Some(v) => parse_hex_color(v)
                .ok_or_else(|| Error::MalformedPath { index, message: format!("unsupported stroke color '{v}'") })?,
            None => [0.0; 3],
        };
        let opacity = match node.attribute("stroke-opacity") {
            Some(v) => number(v, index, "stroke-opacity")?,
            None => 1.0,
        };
        validate_style(width, color, opacity).map_err(|e| Error::MalformedPath { index, message: e.to_string() })?;
        strokes.push(Stroke { control_points: control_points.map(Point2::clamped), width, color, opacity, round_tag });
    }
    if strokes.is_empty() {
        return Err(Error::EmptySketch);
    }
    Ok(SketchCanvas { strokes, width_px, height_px })
}

fn parse_path_data(d: &str, index: usize) -> Result<[(f64, f64); 4]> {
    let mut segments = PathParser::from(d);
    let malformed = |message: String| Error::MalformedPath { index, message };

    let mut next = || -> Result<Option<PathSegment>> {
        match segments.next() {
            None => Ok(None),
            Some(Ok(seg)) => Ok(Some(seg)),
            Some(Err(e)) => Err(malformed(e.to_string())),
        }
    };

    let start = match next()? {
        Some(PathSegment::MoveTo { abs: true, x, y }) => (x, y),
        Some(other) => return Err(unsupported(index, &other)),
        None => return Err(malformed("empty path data".into())),
    };
    let cubic = match next()? {
        Some(PathSegment::CurveTo { abs: true, x1, y1, x2, y2, x, y }) => [(x1, y1), (x2, y2), (x, y)],
        Some(other) => return Err(unsupported(index, &other)),
        None => return Err(malformed("path has no cubic segment".into())),
    };
    if let Some(extra) = next()? {
        return Err(unsupported(index, &extra));
    }
    let points = [start, cubic[0], cubic[1], cubic[2]];
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::MalformedPath { index, message: "non-finite coordinate".into() });
    }
    Ok(points)
}

fn unsupported(index: usize, seg: &PathSegment) -> Error {
    let command = match *seg {
        PathSegment::MoveTo { abs, .. } => {
            if abs {
                "M"
            } else {
                "m"
            }
        }
        PathSegment::LineTo { abs, .. } => {
            if abs {
                "L"
            } else {
                "l"
            }
        }
        PathSegment::HorizontalLineTo { abs, .. } => {
            if abs {
                "H"
            } else {
                "h"
            }
        }
        PathSegment::VerticalLineTo { abs, .. } => {
            if abs {
                "V"
            } else {
                "v"
            }
        }
        PathSegment::CurveTo { abs, .. } => {
            if abs {
                "C"
            } else {
                "c"
            }
        }
        PathSegment::SmoothCurveTo { abs, .. } => {
            if abs {
                "S"
            } else {
                "s"
            }
        }
        PathSegment::Quadratic { abs, .. } => {
            if abs {
                "Q"
            } else {
                "q"
            }
        }
        PathSegment::SmoothQuadratic { abs, .. } => {
            if abs {
                "T"
            } else {
                "t"
            }
        }
        PathSegment::EllipticalArc { abs, .. } => {
            if abs {
                "A"
            } else {
                "a"
            }
        }
        PathSegment::ClosePath { abs } => {
            if abs {
                "Z"
            } else {
                "z"
            }
        }
    };
    Error::UnsupportedPathCommand { index, command: command.to_string() }
}

fn dimension(node: &roxmltree::Node, attr: &str) -> Result<u32> {
    let raw = node.attribute(attr).ok_or_else(|| Error::MalformedSvg(format!("missing '{attr}' on <svg>")))?;
    let v: f64 = raw
        .trim_end_matches("px")
        .trim()
        .parse()
        .map_err(|_| Error::MalformedSvg(format!("bad '{attr}' value '{raw}'")))?;
    if v < 1.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(Error::MalformedSvg(format!("'{attr}' must be a positive integer, got '{raw}'")));
    }
    Ok(v as u32)
}

fn number(raw: &str, index: usize, attr: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::MalformedPath { index, message: format!("bad {attr} '{raw}'") })
}

fn hex_color(c: [f64; 3]) -> String {
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", q(c[0]), q(c[1]), q(c[2]))
}

fn parse_hex_color(raw: &str) -> Option<[f64; 3]> {
    let hex = raw.trim().strip_prefix('#')?;
    if hex.len() != 6 {
        return None;
    }
    let channel = |i: usize| u8::from_str_radix(&hex[i..i + 2], 16).ok().map(|v| v as f64 / 255.0);
    Some([channel(0)?, channel(2)?, channel(4)?])
}
