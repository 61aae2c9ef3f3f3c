//! The full photo-to-sketch run, its manifest, and manifest replay.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keypoints::{
    detect_landmarks, extract_contour_points, fps_points, init_strokes, parse_face, AbstractionConfig, CannyConfig,
    MaskImage,
};
use crate::losses::make_crop_grid;
use crate::optimizer::{run_round1, run_round2, LossReport, Models, OptimizationConfig, RoundSummary};
use crate::raster::{RasterImage, WORKING_RESOLUTION};
use crate::render::BackendKind;
use crate::sketch::{raster_preview, render_svg, Point2, RoundTag, SketchCanvas, Stroke};
use crate::weights::{WeightDigest, Weights};

/// Offset between the face and contour stroke initialization seeds.
const CONTOUR_SEED_OFFSET: u64 = 0x5EED;

/// Initial stroke width in pixels of the working canvas.
pub const STROKE_WIDTH_PX: f64 = 1.5;

fn seeded_strokes(seeds: &[Point2], tag: RoundTag, seed: u64, resolution: u32) -> Vec<Stroke> {
    let mut strokes = init_strokes(seeds, tag, seed);
    for s in &mut strokes {
        s.width = STROKE_WIDTH_PX / resolution as f64;
    }
    strokes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub abstraction: AbstractionConfig,
    pub optimization: OptimizationConfig,
    /// Side of the square working canvas in pixels.
    pub resolution: u32,
    pub backend: BackendKind,
    pub canny: CannyConfig,
}

impl PipelineConfig {
    pub fn new(abstraction: AbstractionConfig, optimization: OptimizationConfig) -> Self {
        PipelineConfig {
            abstraction,
            optimization,
            resolution: WORKING_RESOLUTION,
            backend: BackendKind::Reference,
            canny: CannyConfig::default(),
        }
    }

    /// Every check that needs no model files.
    pub fn validate(&self) -> Result<()> {
        self.abstraction.validate()?;
        self.optimization.validate()?;
        if self.resolution < 8 {
            return Err(Error::invalid("resolution", format!("{} px is too small", self.resolution)));
        }
        if self.abstraction.n_contour > 0 && self.optimization.loss_weights.crop > 0.0 {
            make_crop_grid(self.optimization.crop_blocks, self.resolution as usize)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to rerun a sketch and check that the rerun matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub input: InputRecord,
    pub config: PipelineConfig,
    pub stroke_seed: u64,
    pub augmentation_seed: u64,
    pub weights: Vec<WeightDigest>,
    pub rounds: Vec<RoundSummary>,
    pub svg_sha256: String,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub s1: SketchCanvas,
    pub s2: SketchCanvas,
    pub svg: String,
    pub preview: RasterImage,
    pub mask: MaskImage,
    pub report: LossReport,
    pub manifest: Manifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs preprocessing, keypoints, both rounds and export on one photo.
pub fn run_pipeline(image_path: impl AsRef<Path>, cfg: &PipelineConfig, weights: &Weights) -> Result<RunOutput> {
    let image_path = image_path.as_ref();
    cfg.validate()?;
    let (photo, sha) = (|| -> Result<_> {
        let bytes = std::fs::read(image_path)?;
        let photo = RasterImage::load_resized(image_path, cfg.resolution)?;
        Ok((photo, sha256_hex(&bytes)))
    })()
    .map_err(|e| e.in_stage("preprocess"))?;
    let input = InputRecord { path: image_path.to_path_buf(), sha256: sha };
    run_on_photo(&photo, input, cfg, weights)
}

fn run_on_photo(photo: &RasterImage, input: InputRecord, cfg: &PipelineConfig, weights: &Weights) -> Result<RunOutput> {
    let abs = &cfg.abstraction;
    let res = cfg.resolution;
    let rasterizer = cfg.backend.create();
    let models = Models { rasterizer: rasterizer.as_ref(), semantic: &weights.semantic, structure: &weights.structure };

    let landmarks = detect_landmarks(photo, &weights.landmarker).map_err(|e| e.in_stage("landmarks"))?;
    let mask = parse_face(photo, &weights.parser).map_err(|e| e.in_stage("face parsing"))?;

    let face_seeds = fps_points(&landmarks, abs.n_face).map_err(|e| e.in_stage("face keypoints"))?;
    let face_strokes = seeded_strokes(&face_seeds, RoundTag::Face, abs.seed, res);
    let (s1, mut report) =
        run_round1(photo, face_strokes, (res, res), &cfg.optimization, models).map_err(|e| e.in_stage("round 1"))?;

    let contour_strokes = if abs.n_contour > 0 {
        let contour = extract_contour_points(&mask, &cfg.canny).map_err(|e| e.in_stage("contour keypoints"))?;
        let seeds = fps_points(&contour, abs.n_contour).map_err(|e| e.in_stage("contour keypoints"))?;
        seeded_strokes(&seeds, RoundTag::Contour, abs.seed.wrapping_add(CONTOUR_SEED_OFFSET), res)
    } else {
        Vec::new()
    };
    let (s2, round2) =
        run_round2(photo, &mask, &s1, contour_strokes, &cfg.optimization, models).map_err(|e| e.in_stage("round 2"))?;
    report.append(round2);

    let (svg, preview) =
        (|| Ok::<_, Error>((render_svg(&s2)?, raster_preview(&s2)?)))().map_err(|e| e.in_stage("export"))?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        input,
        config: cfg.clone(),
        stroke_seed: abs.seed,
        augmentation_seed: cfg.optimization.seed,
        weights: weights.digests.clone(),
        rounds: report.rounds.clone(),
        svg_sha256: sha256_hex(svg.as_bytes()),
    };
    Ok(RunOutput { s1, s2, svg, preview, mask, report, manifest })
}

/// Reruns a manifest. The input file and every weight file must hash as
/// recorded, and the rerun must reproduce the recorded SVG hash. A relative
/// input path is resolved against `base_dir`.
pub fn replay(manifest: &Manifest, base_dir: &Path, weights: &Weights) -> Result<RunOutput> {
    if weights.digests != manifest.weights {
        let changed: Vec<&str> =
            manifest.weights.iter().filter(|d| !weights.digests.contains(d)).map(|d| d.file.as_str()).collect();
        return Err(Error::ManifestMismatch(format!("weight files differ: {}", changed.join(", "))));
    }
    let path = if manifest.input.path.is_absolute() {
        manifest.input.path.clone()
    } else {
        base_dir.join(&manifest.input.path)
    };
    let bytes = std::fs::read(&path)?;
    if sha256_hex(&bytes) != manifest.input.sha256 {
        return Err(Error::ManifestMismatch(format!("input {} has changed", path.display())));
    }
    let out = run_pipeline(&path, &manifest.config, weights)?;
    if out.manifest.svg_sha256 != manifest.svg_sha256 {
        return Err(Error::ManifestMismatch("replayed SVG differs from the recorded one".into()));
    }
    Ok(out)
}
