//! Two-round stroke optimization.
//!
//! Round 1 fits the face strokes to the photo under the semantic loss. Round 2
//! adds the contour strokes on top and fits under the weighted sum of the
//! semantic, structure and crop shadow losses. In the default scope only the
//! new strokes move in round 2.

use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::MaskImage;
use crate::losses::{make_crop_grid, LossValue, SemanticConfig, SemanticLoss, StructureLoss};
use crate::nn::Encoder;
use crate::raster::{RasterImage, WORKING_RESOLUTION};
use crate::render::{Rasterizer, RenderGradients};
use crate::sketch::{Point2, SketchCanvas, Stroke};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub clip: f64,
    pub vgg: f64,
    pub crop: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { clip: 1.0, vgg: 1.0, crop: 1.0 }
    }
}

/// Which strokes round 2 may move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Round2Scope {
    #[default]
    ContourOnly,
    Joint,
}

impl FromStr for Round2Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contour_only" | "contour-only" => Ok(Round2Scope::ContourOnly),
            "joint" => Ok(Round2Scope::Joint),
            other => Err(Error::invalid("round2 scope", format!("'{other}' (expected contour_only or joint)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationConfig {
    pub iterations_per_round: usize,
    /// Adam learning rate in pixels of the 224 px working grid, that is
    /// `step_size / 224` in normalized units at any canvas size.
    pub step_size: f64,
    pub loss_weights: LossWeights,
    pub round2_scope: Round2Scope,
    pub convergence_window: usize,
    pub convergence_tol: f64,
    pub seed: u64,
    /// Block count of the crop shadow loss.
    pub crop_blocks: usize,
    pub semantic: SemanticConfig,
    /// Keep a canvas every this many iterations; 0 keeps none.
    pub snapshot_every: usize,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        OptimizationConfig {
            iterations_per_round: 800,
            step_size: 1.0,
            loss_weights: LossWeights::default(),
            round2_scope: Round2Scope::ContourOnly,
            convergence_window: 100,
            convergence_tol: 1e-3,
            seed: 0,
            crop_blocks: 16,
            semantic: SemanticConfig::default(),
            snapshot_every: 0,
        }
    }
}

impl OptimizationConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.loss_weights;
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::invalid("step size", format!("{} is not positive", self.step_size)));
        }
        if ![w.clip, w.vgg, w.crop].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::invalid("loss weights", format!("{w:?} must be finite and non-negative")));
        }
        if !(self.convergence_tol.is_finite() && self.convergence_tol > 0.0) {
            return Err(Error::invalid("convergence tolerance", format!("{} is not positive", self.convergence_tol)));
        }
        let s = &self.semantic;
        if !(0.0 < s.min_crop_scale && s.min_crop_scale <= s.max_crop_scale && s.max_crop_scale <= 1.0) {
            return Err(Error::invalid("crop scale", format!("[{}, {}]", s.min_crop_scale, s.max_crop_scale)));
        }
        Ok(())
    }
}

/// The encoders and rasterizer a run uses.
#[derive(Clone, Copy)]
pub struct Models<'a> {
    pub rasterizer: &'a dyn Rasterizer,
    pub semantic: &'a Encoder,
    pub structure: &'a Encoder,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    /// Counted across both rounds.
    pub iteration: usize,
    pub round: u8,
    /// Semantic loss on the uncropped image. `l_sum` uses this value.
    pub l_clip: f64,
    /// The crop-averaged estimate the gradient came from.
    pub l_clip_sample: f64,
    pub l_vgg: f64,
    pub l_crop: f64,
    pub l_sum: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: u8,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub records: Vec<LossRecord>,
    pub rounds: Vec<RoundSummary>,
    pub s1: Option<SketchCanvas>,
    pub s2: Option<SketchCanvas>,
    /// `(iteration, canvas before that iteration's update)`.
    pub frames: Vec<(usize, SketchCanvas)>,
}

impl LossReport {
    pub fn round_records(&self, round: u8) -> impl Iterator<Item = &LossRecord> {
        self.records.iter().filter(move |r| r.round == round)
    }

    /// Means of `L_sum` over the first and the last `window` records of a
    /// round, with the window shrunk to half the round if needed.
    pub fn window_means(&self, round: u8, window: usize) -> Option<(f64, f64)> {
        let sums: Vec<f64> = self.round_records(round).map(|r| r.l_sum).collect();
        let w = window.min(sums.len() / 2);
        if w == 0 {
            return None;
        }
        Some((mean(&sums[..w]), mean(&sums[sums.len() - w..])))
    }

    /// Same as [`window_means`](Self::window_means) for one loss column.
    pub fn window_means_of(&self, round: u8, window: usize, pick: fn(&LossRecord) -> f64) -> Option<(f64, f64)> {
        let vals: Vec<f64> = self.round_records(round).map(pick).collect();
        let w = window.min(vals.len() / 2);
        (w > 0).then(|| (mean(&vals[..w]), mean(&vals[vals.len() - w..])))
    }

    /// Appends a later round, renumbering its iterations after ours.
    pub fn append(&mut self, mut later: LossReport) {
        let offset = self.records.len();
        for r in &mut later.records {
            r.iteration += offset;
        }
        self.records.append(&mut later.records);
        self.rounds.append(&mut later.rounds);
        self.frames.extend(later.frames.into_iter().map(|(i, c)| (i + offset, c)));
        self.s1 = self.s1.take().or(later.s1);
        self.s2 = later.s2.or(self.s2.take());
    }

    /// CSV with columns `iteration,l_clip,l_vgg,l_crop,l_sum,grad_norm`.
    /// Terms a round does not evaluate are written as 0.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "l_clip", "l_vgg", "l_crop", "l_sum", "grad_norm"])?;
        for r in &self.records {
            w.write_record(&[
                r.iteration.to_string(),
                r.l_clip.to_string(),
                r.l_vgg.to_string(),
                r.l_crop.to_string(),
                r.l_sum.to_string(),
                r.grad_norm.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// True once the mean of the last `window` losses differs from the mean of
/// the `window` before it by less than `tol` relative.
pub fn has_converged(losses: &[f64], window: usize, tol: f64) -> bool {
    let n = losses.len();
    if window == 0 || n < 2 * window {
        return false;
    }
    let prev = mean(&losses[n - 2 * window..n - window]);
    let last = mean(&losses[n - window..]);
    (prev - last).abs() < tol * prev.abs().max(f64::MIN_POSITIVE)
}

/// Adam over the control points of selected strokes.
struct Adam {
    lr: f64,
    m: Vec<[[f64; 2]; 4]>,
    v: Vec<[[f64; 2]; 4]>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(canvas: &SketchCanvas, step_px: f64) -> Self {
        let n = canvas.len();
        Adam { lr: step_px / WORKING_RESOLUTION as f64, m: vec![[[0.0; 2]; 4]; n], v: vec![[[0.0; 2]; 4]; n], t: 0 }
    }

    fn step(&mut self, strokes: &mut [Stroke], grads: &RenderGradients, trainable: std::ops::Range<usize>) {
        self.t += 1;
        let (c1, c2) = (1.0 - BETA1.powi(self.t), 1.0 - BETA2.powi(self.t));
        for s in trainable {
            for j in 0..4 {
                let p = strokes[s].control_points[j];
                let mut q = [p.x, p.y];
                for a in 0..2 {
                    let g = grads.points[s][j][a];
                    let m = &mut self.m[s][j][a];
                    let v = &mut self.v[s][j][a];
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    q[a] -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
                strokes[s].set_point(j, Point2::new(q[0], q[1]));
            }
        }
    }
}

/// Augmentation seed of one iteration, decorrelated across rounds.
fn iteration_seed(seed: u64, round: u8, iteration: usize) -> u64 {
    let mut z = seed ^ ((round as u64) << 56) ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Terms {
    l_clip: f64,
    l_clip_sample: f64,
    l_vgg: f64,
    l_crop: f64,
    l_sum: f64,
    grad: RasterImage,
}

/// Shared loop of both rounds. `objective` maps the rendered sketch and
/// the iteration to the loss terms and the pixel gradient of the weighted sum.
///
/// The gradient follows the crop-averaged semantic estimate, which changes
/// with every iteration's crops. Records and the convergence test use the
/// uncropped value so that they track the objective rather than crop noise.
fn optimize(
    mut canvas: SketchCanvas,
    trainable: std::ops::Range<usize>,
    round: u8,
    cfg: &OptimizationConfig,
    rasterizer: &dyn Rasterizer,
    mut objective: impl FnMut(&RasterImage, usize) -> Result<Terms>,
) -> Result<(SketchCanvas, LossReport)> {
    let stage = if round == 1 { "round 1" } else { "round 2" };
    let mut adam = Adam::new(&canvas, cfg.step_size);
    let mut report = LossReport::default();
    let mut sums = Vec::with_capacity(cfg.iterations_per_round);
    let mut converged = false;

    for it in 0..cfg.iterations_per_round {
        if cfg.snapshot_every > 0 && it % cfg.snapshot_every == 0 {
            report.frames.push((it, canvas.clone()));
        }
        let image = rasterizer.forward(&canvas)?;
        let terms = objective(&image, it)?;
        if !(terms.l_sum.is_finite() && terms.l_clip_sample.is_finite()) {
            return Err(Error::NumericFailure { stage, quantity: "loss", iteration: it });
        }
        if !terms.grad.is_finite() {
            return Err(Error::NumericFailure { stage, quantity: "pixel gradient", iteration: it });
        }
        let grads = rasterizer.backward(&canvas, &terms.grad)?;
        if !grads.is_finite() {
            return Err(Error::NumericFailure { stage, quantity: "gradient", iteration: it });
        }
        let grad_norm = grads.points[trainable.clone()].iter().flatten().flatten().map(|g| g * g).sum::<f64>().sqrt();
        report.records.push(LossRecord {
            iteration: it,
            round,
            l_clip: terms.l_clip,
            l_clip_sample: terms.l_clip_sample,
            l_vgg: terms.l_vgg,
            l_crop: terms.l_crop,
            l_sum: terms.l_sum,
            grad_norm,
        });
        adam.step(&mut canvas.strokes, &grads, trainable.clone());
        sums.push(terms.l_sum);
        if has_converged(&sums, cfg.convergence_window, cfg.convergence_tol) {
            converged = true;
            break;
        }
    }
    report.rounds.push(RoundSummary { round, iterations: report.records.len(), converged });
    Ok((canvas, report))
}

fn check_target(target: &RasterImage, width: u32, height: u32) -> Result<()> {
    if (target.width(), target.height()) != (width as usize, height as usize) {
        return Err(Error::ShapeMismatch {
            expected: format!("{width}x{height}"),
            actual: format!("{}x{}", target.width(), target.height()),
        });
    }
    Ok(())
}

/// Optimizes `face_strokes` on a `width`×`height` canvas under the semantic
/// loss against `target`.
pub fn run_round1(
    target: &RasterImage,
    face_strokes: Vec<Stroke>,
    (width, height): (u32, u32),
    cfg: &OptimizationConfig,
    models: Models<'_>,
) -> Result<(SketchCanvas, LossReport)> {
    cfg.validate()?;
    check_target(target, width, height)?;
    let canvas = SketchCanvas::with_strokes(width, height, face_strokes);
    canvas.validate()?;
    let semantic = SemanticLoss::new(models.semantic, target, cfg.semantic)?;
    let w = cfg.loss_weights.clip;
    let n = canvas.len();
    let (s1, mut report) = optimize(canvas, 0..n, 1, cfg, models.rasterizer, |image, it| {
        let LossValue { value, grad } = semantic.evaluate(image, iteration_seed(cfg.seed, 1, it))?;
        let plain = if cfg.semantic.n_aug == 0 { value } else { semantic.plain_value(image)? };
        Ok(Terms {
            l_clip: plain,
            l_clip_sample: value,
            l_vgg: 0.0,
            l_crop: 0.0,
            l_sum: w * plain,
            grad: grad.scaled(w),
        })
    })?;
    report.s1 = Some(s1.clone());
    Ok((s1, report))
}

/// Superimposes `contour_strokes` on `s1` and optimizes the joint canvas
/// under the weighted sum of all three losses. The semantic term compares
/// with `target`; the other two with the mask composite.
pub fn run_round2(
    target: &RasterImage,
    mask: &MaskImage,
    s1: &SketchCanvas,
    contour_strokes: Vec<Stroke>,
    cfg: &OptimizationConfig,
    models: Models<'_>,
) -> Result<(SketchCanvas, LossReport)> {
    cfg.validate()?;
    if contour_strokes.is_empty() {
        let report = LossReport {
            rounds: vec![RoundSummary { round: 2, iterations: 0, converged: false }],
            s2: Some(s1.clone()),
            ..LossReport::default()
        };
        return Ok((s1.clone(), report));
    }
    check_target(target, s1.width_px, s1.height_px)?;
    let composite = mask.composite();
    check_target(composite, s1.width_px, s1.height_px)?;
    if s1.width_px != s1.height_px {
        return Err(Error::invalid("canvas", "the crop shadow loss needs a square canvas"));
    }
    let grid = make_crop_grid(cfg.crop_blocks, s1.width_px as usize)?;

    let n_face = s1.len();
    let mut strokes = s1.strokes.clone();
    strokes.extend(contour_strokes);
    let canvas = SketchCanvas::with_strokes(s1.width_px, s1.height_px, strokes);
    canvas.validate()?;
    let trainable = match cfg.round2_scope {
        Round2Scope::ContourOnly => n_face..canvas.len(),
        Round2Scope::Joint => 0..canvas.len(),
    };

    let w = cfg.loss_weights;
    let semantic = if w.clip > 0.0 { Some(SemanticLoss::new(models.semantic, target, cfg.semantic)?) } else { None };
    let structure = if w.vgg > 0.0 { Some(StructureLoss::new(models.structure, composite)?) } else { None };
    let (s2, mut report) = optimize(canvas, trainable, 2, cfg, models.rasterizer, |image, it| {
        let mut grad = RasterImage::zeros_like(image);
        let mut term = |loss: Option<LossValue>, weight: f64| -> Result<f64> {
            Ok(match loss {
                Some(lv) => {
                    grad.add_scaled(&lv.grad, weight)?;
                    lv.value
                }
                None => 0.0,
            })
        };
        let l_clip_sample =
            term(semantic.as_ref().map(|s| s.evaluate(image, iteration_seed(cfg.seed, 2, it))).transpose()?, w.clip)?;
        let l_clip = match &semantic {
            Some(s) if cfg.semantic.n_aug > 0 => s.plain_value(image)?,
            _ => l_clip_sample,
        };
        let l_vgg = term(structure.as_ref().map(|s| s.evaluate(image)).transpose()?, w.vgg)?;
        let l_crop = term(
            (w.crop > 0.0).then(|| crate::losses::crop_shadow_loss(composite, image, &grid)).transpose()?,
            w.crop,
        )?;
        let l_sum = w.clip * l_clip + w.vgg * l_vgg + w.crop * l_crop;
        Ok(Terms { l_clip, l_clip_sample, l_vgg, l_crop, l_sum, grad })
    })?;

    if cfg.round2_scope == Round2Scope::ContourOnly {
        let frozen = SketchCanvas::with_strokes(s1.width_px, s1.height_px, s2.strokes[..n_face].to_vec());
        if !frozen.same_geometry(s1) {
            return Err(Error::Internal("contour_only round 2 moved a face stroke".into()));
        }
    }
    report.s2 = Some(s2.clone());
    Ok((s2, report))
}
