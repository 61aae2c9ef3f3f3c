//! Structural similarity between photos and sketches, per-budget summaries,
//! and loss-curve plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::LossReport;
use crate::par;
use crate::raster::{RasterImage, WORKING_RESOLUTION};
use crate::sketch::{parse_svg, raster_preview};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.map(|v| v / sum)
}

/// Mean SSIM over every full window position of the grayscale images, with
/// intensities in `[0, 1]`.
pub fn ssim(a: &RasterImage, b: &RasterImage) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (ga, gb) = (a.to_gray(), b.to_gray());
    let (w, h) = (ga.width(), ga.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid("ssim", format!("{w}x{h} is smaller than the {SSIM_WINDOW}px window")));
    }
    let g = gaussian_window();
    let (x, y) = (ga.data(), gb.data());
    let products: [Vec<f64>; 5] = [
        x.to_vec(),
        y.to_vec(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(y).map(|(p, q)| p * q).collect(),
    ];
    // Horizontal pass, then vertical, keeping only full windows.
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let filtered: Vec<Vec<f64>> = products
        .iter()
        .map(|img| {
            let mut rows = vec![0.0; ow * h];
            for yy in 0..h {
                for xx in 0..ow {
                    rows[yy * ow + xx] = g.iter().enumerate().map(|(i, k)| k * img[yy * w + xx + i]).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for yy in 0..oh {
                for xx in 0..ow {
                    out[yy * ow + xx] = g.iter().enumerate().map(|(i, k)| k * rows[(yy + i) * ow + xx]).sum();
                }
            }
            out
        })
        .collect();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let total: f64 = (0..ow * oh)
        .map(|i| {
            let (mx, my) = (filtered[0][i], filtered[1][i]);
            let vx = filtered[2][i] - mx * mx;
            let vy = filtered[3][i] - my * my;
            let cxy = filtered[4][i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (ow * oh) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub pair_id: String,
    pub budget: usize,
    pub ssim: f64,
    pub runtime_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub budget: usize,
    pub mean_ssim: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Ascending by budget.
    pub budgets: Vec<BudgetSummary>,
    /// Largest minus smallest per-budget mean; `None` with one budget.
    pub spread: Option<f64>,
}

/// Per-budget means of SSIM.
pub fn aggregate(records: &[MetricRecord]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::invalid("metrics", "no records to aggregate"));
    }
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records {
        groups.entry(r.budget).or_default().push(r.ssim);
    }
    let budgets: Vec<BudgetSummary> = groups
        .into_iter()
        .map(|(budget, v)| BudgetSummary { budget, mean_ssim: v.iter().sum::<f64>() / v.len() as f64, count: v.len() })
        .collect();
    let spread = (budgets.len() > 1).then(|| {
        let means = budgets.iter().map(|b| b.mean_ssim);
        means.clone().fold(f64::MIN, f64::max) - means.fold(f64::MAX, f64::min)
    });
    Ok(Aggregate { budgets, spread })
}

impl Aggregate {
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["budget", "mean_ssim", "count"])?;
        for b in &self.budgets {
            w.write_record(&[b.budget.to_string(), format!("{:.6}", b.mean_ssim), b.count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = String::from("budget  mean SSIM  count\n");
        for b in &self.budgets {
            let _ = writeln!(s, "{:>6}  {:>9.4}  {:>5}", b.budget, b.mean_ssim, b.count);
        }
        if let Some(spread) = self.spread {
            let _ = writeln!(s, "spread across budgets: {spread:.4}");
        }
        s
    }
}

/// One row of a pairs manifest: a photo, its sketch and the stroke budget.
/// Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: String,
    pub budget: usize,
    pub photo: PathBuf,
    pub sketch: PathBuf,
    #[serde(default)]
    pub runtime_s: Option<f64>,
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairEntry>> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for row in csv::Reader::from_path(path)?.deserialize() {
        let mut p: PairEntry = row?;
        p.photo = base.join(&p.photo);
        p.sketch = base.join(&p.sketch);
        pairs.push(p);
    }
    if pairs.is_empty() {
        return Err(Error::invalid("pairs manifest", format!("{} lists no pairs", path.display())));
    }
    Ok(pairs)
}

/// An SVG sketch is rasterized at the working resolution; any other file is
/// read as an image and resampled to it.
fn load_for_eval(path: &Path) -> Result<RasterImage> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("svg")) {
        let mut canvas = parse_svg(&std::fs::read_to_string(path)?)?;
        canvas.width_px = WORKING_RESOLUTION;
        canvas.height_px = WORKING_RESOLUTION;
        raster_preview(&canvas)
    } else {
        RasterImage::load_resized(path, WORKING_RESOLUTION)
    }
}

/// The outcome of one pair: a record or the error that prevented it.
pub type PairOutcome = std::result::Result<MetricRecord, (String, usize, Error)>;

/// SSIM of every pair, in manifest order.
pub fn evaluate_pairs(pairs: &[PairEntry]) -> Vec<PairOutcome> {
    par::map_slice(pairs, |p| {
        let photo = load_for_eval(&p.photo);
        let sketch = load_for_eval(&p.sketch);
        photo
            .and_then(|photo| ssim(&photo, &sketch?))
            .map(|ssim| MetricRecord {
                pair_id: p.pair_id.clone(),
                budget: p.budget,
                ssim,
                runtime_s: p.runtime_s.unwrap_or(f64::NAN),
            })
            .map_err(|e| (p.pair_id.clone(), p.budget, e))
    })
}

/// Metrics CSV: `pair_id,budget,ssim,runtime_s,error`, one row per pair.
/// Failed pairs have empty metric cells and the error message.
pub fn write_metrics_csv(outcomes: &[PairOutcome], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["pair_id", "budget", "ssim", "runtime_s", "error"])?;
    for o in outcomes {
        match o {
            Ok(r) => {
                let runtime = if r.runtime_s.is_nan() { String::new() } else { format!("{:.3}", r.runtime_s) };
                w.write_record(&[
                    r.pair_id.clone(),
                    r.budget.to_string(),
                    format!("{:.6}", r.ssim),
                    runtime,
                    String::new(),
                ])?
            }
            Err((id, budget, e)) => {
                w.write_record(&[id.clone(), budget.to_string(), String::new(), String::new(), e.to_string()])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// SVG line plot of `L_sum` and its three terms against the iteration,
/// with a dashed line where round 2 starts.
pub fn loss_curve_svg(report: &LossReport) -> String {
    let (w, h, pad) = (640.0, 360.0, 40.0);
    let recs = &report.records;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    if recs.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let series: [(&str, &str, fn(&crate::optimizer::LossRecord) -> f64); 4] = [
        ("L_sum", "black", |r| r.l_sum),
        ("L_clip", "#1f77b4", |r| r.l_clip),
        ("L_vgg", "#2ca02c", |r| r.l_vgg),
        ("L_crop", "#d62728", |r| r.l_crop),
    ];
    let ymax = recs.iter().map(|r| r.l_sum.max(r.l_clip).max(r.l_vgg).max(r.l_crop)).fold(0.0, f64::max).max(1e-12);
    let n = recs.len().max(2) - 1;
    let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / n as f64;
    let py = |v: f64| h - pad - (h - 2.0 * pad) * (v / ymax).clamp(0.0, 1.0);
    let _ = writeln!(s, "<path d=\"M{pad} {pad} V{} H{}\" stroke=\"#888\" fill=\"none\"/>", h - pad, w - pad);
    let _ = writeln!(s, "<text x=\"{pad}\" y=\"{}\" font-size=\"11\">{ymax:.4}</text>", pad - 6.0);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\">iteration {}</text>",
        w - pad - 80.0,
        h - pad + 16.0,
        recs.len() - 1
    );
    if let Some(first2) = recs.iter().position(|r| r.round == 2) {
        let x = px(first2);
        let _ = writeln!(s, "<path d=\"M{x:.2} {pad} V{}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>", h - pad);
    }
    for (k, (name, colour, pick)) in series.iter().enumerate() {
        let mut d = String::new();
        for (i, r) in recs.iter().enumerate() {
            let _ = write!(d, "{}{:.2} {:.2}", if i == 0 { "M" } else { " L" }, px(i), py(pick(r)));
        }
        let _ = writeln!(s, "<path d=\"{d}\" stroke=\"{colour}\" fill=\"none\" stroke-width=\"1.2\"/>");
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{colour}\">{name}</text>",
            w - pad - 60.0,
            pad + 14.0 * k as f64
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let g = gaussian_window();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(g[0], g[SSIM_WINDOW - 1]);
    }

    #[test]
    fn identical_images_score_one() {
        let img = RasterImage::from_fn(20, 16, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_images_are_rejected() {
        let img = RasterImage::white(10, 30);
        assert!(ssim(&img, &img).is_err());
        assert!(ssim(&RasterImage::white(12, 12), &RasterImage::white(13, 12)).is_err());
    }

    #[test]
    fn aggregate_means_and_spread() {
        let rec = |id: &str, budget, ssim| MetricRecord { pair_id: id.into(), budget, ssim, runtime_s: 1.0 };
        assert!(aggregate(&[]).is_err());
        let one = aggregate(&[rec("a", 40, 0.3)]).unwrap();
        assert_eq!(one.budgets[0].mean_ssim, 0.3);
        assert_eq!(one.spread, None);
        let two = aggregate(&[rec("a", 40, 0.30), rec("b", 40, 0.32)]).unwrap();
        assert!((two.budgets[0].mean_ssim - 0.31).abs() < 1e-12);
        assert_eq!(two.budgets[0].count, 2);
        let three = aggregate(&[rec("a", 120, 0.307), rec("b", 40, 0.305), rec("c", 80, 0.306)]).unwrap();
        assert_eq!(three.budgets.iter().map(|b| b.budget).collect::<Vec<_>>(), vec![40, 80, 120]);
        assert!((three.spread.unwrap() - 0.002).abs() < 1e-12);
        assert!(three.to_table().contains("spread across budgets: 0.0020"));
    }
}
