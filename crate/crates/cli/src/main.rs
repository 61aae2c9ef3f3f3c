//! `portrait-sketch`: photo to vector portrait sketch.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use sketch_core::eval::{aggregate, evaluate_pairs, loss_curve_svg, read_pairs, write_metrics_csv};
use sketch_core::keypoints::AbstractionConfig;
use sketch_core::losses::{valid_block_counts, SemanticConfig};
use sketch_core::optimizer::{OptimizationConfig, Round2Scope};
use sketch_core::pipeline::{replay, run_pipeline, Manifest, PipelineConfig, RunOutput};
use sketch_core::render::BackendKind;
use sketch_core::sketch::{apply_style, parse_svg, render_svg, StyleSpec};
use sketch_core::weights::Weights;
use sketch_core::Error;

const WEIGHTS_ENV: &str = "PORTRAIT_SKETCH_WEIGHTS";
const SNAPSHOT_EVERY: usize = 100;

#[derive(Parser)]
#[command(name = "portrait-sketch", version, about = "Vector portrait sketches from face photographs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sketch one or more photos.
    Sketch(SketchArgs),
    /// Apply a brush style file to a sketch SVG.
    Restyle {
        svg: PathBuf,
        style: PathBuf,
        /// Output path; defaults to standard output.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// SSIM of photo/sketch pairs listed in a CSV (pair_id,budget,photo,sketch[,runtime_s]).
    Eval {
        pairs: PathBuf,
        /// Metrics CSV path; defaults to standard output.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Rerun a sketch from its manifest and check that the SVG is reproduced.
    Replay {
        manifest: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, env = WEIGHTS_ENV)]
        weights_dir: PathBuf,
    },
}

#[derive(Args)]
struct SketchArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(short, long)]
    out: PathBuf,
    /// Total stroke count S. Defaults to 120, or to N_f + N_c when both are given.
    #[arg(long)]
    strokes: Option<usize>,
    /// Face strokes N_f.
    #[arg(long)]
    face: Option<usize>,
    /// Contour strokes N_c.
    #[arg(long)]
    contour: Option<usize>,
    /// Block count of the crop shadow loss; must be a square whose root divides the resolution.
    #[arg(long, default_value_t = 16)]
    k: usize,
    /// Iteration cap per round.
    #[arg(long, default_value_t = 800)]
    iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "contour_only")]
    round2_scope: Round2Scope,
    /// Disable the random crops of the semantic loss.
    #[arg(long)]
    no_aug: bool,
    #[arg(long, default_value = "reference")]
    backend: BackendKind,
    #[arg(long, env = WEIGHTS_ENV)]
    weights_dir: PathBuf,
    /// Brush style applied to an extra `<name>.styled.svg`.
    #[arg(long)]
    style: Option<PathBuf>,
    /// Write a PNG of the canvas every 100 iterations.
    #[arg(long)]
    snapshots: bool,
    /// Photos sketched in parallel.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Side of the working canvas in pixels.
    #[arg(long, default_value_t = 224)]
    resolution: u32,
}

/// A failure with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.root() {
            Error::InvalidValue { .. }
            | Error::InvalidCropGrid { .. }
            | Error::UnknownBackend(_)
            | Error::PoolExhausted { .. }
            | Error::StyleIndex { .. } => 2,
            Error::WeightsNotFound(_) | Error::BadWeights { .. } => 3,
            Error::NumericFailure { .. } => 4,
            _ => 1,
        };
        let message = match e.root() {
            Error::InvalidCropGrid { k, resolution, suggestions } => format!(
                "invalid k={k} for {resolution} px; valid values are {} (nearest: {})",
                join(&valid_block_counts(*resolution)),
                join(suggestions)
            ),
            _ => e.to_string(),
        };
        Failure { code, message }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// The run configuration implied by the flags, checked without touching
/// any model file.
fn pipeline_config(a: &SketchArgs) -> Result<PipelineConfig, Failure> {
    let (n_face, n_contour) = match (a.strokes, a.face, a.contour) {
        (Some(s), Some(f), Some(c)) if f + c != s => {
            return Err(Failure::validation(format!("N_f + N_c must equal S ({f} + {c} != {s})")))
        }
        (_, Some(f), Some(c)) => (f, c),
        (s, Some(f), None) => {
            let s = s.unwrap_or(120);
            (f, s.checked_sub(f).ok_or_else(|| Failure::validation(format!("--face {f} exceeds S = {s}")))?)
        }
        (s, None, Some(c)) => {
            let s = s.unwrap_or(120);
            (s.checked_sub(c).ok_or_else(|| Failure::validation(format!("--contour {c} exceeds S = {s}")))?, c)
        }
        (s, None, None) => {
            let even = AbstractionConfig::even_split(s.unwrap_or(120), a.seed)?;
            (even.n_face, even.n_contour)
        }
    };
    if a.workers == 0 {
        return Err(Failure::validation("--workers must be at least 1"));
    }
    let semantic = if a.no_aug { SemanticConfig::default().without_augmentation() } else { SemanticConfig::default() };
    let optimization = OptimizationConfig {
        iterations_per_round: a.iters,
        round2_scope: a.round2_scope,
        seed: a.seed,
        crop_blocks: a.k,
        semantic,
        snapshot_every: if a.snapshots { SNAPSHOT_EVERY } else { 0 },
        ..OptimizationConfig::default()
    };
    let mut cfg = PipelineConfig::new(AbstractionConfig::new(n_face, n_contour, a.seed)?, optimization);
    cfg.resolution = a.resolution;
    cfg.backend = a.backend;
    // k is checked even without contour strokes so that a bad flag never passes silently.
    sketch_core::losses::make_crop_grid(a.k, a.resolution as usize)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_outputs(out_dir: &Path, name: &str, run: &RunOutput, style: Option<&StyleSpec>) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir)?;
    let file = |ext: &str| out_dir.join(format!("{name}.{ext}"));
    std::fs::write(file("svg"), &run.svg)?;
    run.preview.save_png(file("png"))?;
    run.report.write_csv(std::fs::File::create(file("losses.csv"))?)?;
    std::fs::write(file("losses.svg"), loss_curve_svg(&run.report))?;
    std::fs::write(file("manifest.json"), run.manifest.to_json()?)?;
    for (iteration, canvas) in &run.report.frames {
        sketch_core::sketch::raster_preview(canvas)?.save_png(file(&format!("iter{iteration:04}.png")))?;
    }
    if let Some(style) = style {
        std::fs::write(file("styled.svg"), render_svg(&apply_style(&run.s2, style)?)?)?;
    }
    Ok(())
}

fn cmd_sketch(args: SketchArgs) -> Result<(), Failure> {
    let cfg = pipeline_config(&args)?;
    let style = args.style.as_ref().map(StyleSpec::load).transpose()?;
    for input in &args.inputs {
        if !input.is_file() {
            return Err(Failure::validation(format!("input {} does not exist", input.display())));
        }
    }
    let weights = Weights::load(&args.weights_dir)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Failure { code: 1, message: e.to_string() })?;
    let results: Vec<(PathBuf, Result<f64, Error>)> = pool.install(|| {
        use rayon::prelude::*;
        args.inputs
            .par_iter()
            .map(|input| {
                let start = Instant::now();
                let res = (|| {
                    let path = input.canonicalize()?;
                    let name = input.file_stem().map_or("sketch".into(), |s| s.to_string_lossy().into_owned());
                    let run = run_pipeline(&path, &cfg, &weights)?;
                    write_outputs(&args.out, &name, &run, style.as_ref())?;
                    Ok(start.elapsed().as_secs_f64())
                })();
                (input.clone(), res)
            })
            .collect()
    });

    let mut first_failure = None;
    for (input, res) in results {
        match res {
            Ok(secs) => eprintln!("{}: done in {secs:.1}s", input.display()),
            Err(e) => {
                let failure = Failure::from(e);
                eprintln!("{}: {}", input.display(), failure.message);
                first_failure.get_or_insert(failure);
            }
        }
    }
    first_failure.map_or(Ok(()), Err)
}

fn cmd_restyle(svg: &Path, style: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let style = StyleSpec::load(style)?;
    let canvas = parse_svg(&std::fs::read_to_string(svg).map_err(Error::from)?)?;
    let doc = render_svg(&apply_style(&canvas, &style)?)?;
    match out {
        Some(p) => std::fs::write(p, doc).map_err(Error::from)?,
        None => print!("{doc}"),
    }
    Ok(())
}

fn cmd_eval(pairs: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let pairs = read_pairs(pairs)?;
    let outcomes = evaluate_pairs(&pairs);
    match out {
        Some(p) => write_metrics_csv(&outcomes, std::fs::File::create(p).map_err(Error::from)?)?,
        None => write_metrics_csv(&outcomes, std::io::stdout().lock())?,
    }
    let records: Vec<_> = outcomes.iter().filter_map(|o| o.as_ref().ok().cloned()).collect();
    for (id, _, e) in outcomes.iter().filter_map(|o| o.as_ref().err()) {
        eprintln!("pair {id}: {e}");
    }
    if records.is_empty() {
        return Err(Failure { code: 1, message: "every pair failed".into() });
    }
    eprint!("{}", aggregate(&records)?.to_table());
    Ok(())
}

fn cmd_replay(manifest_path: &Path, out: &Path, weights_dir: &Path) -> Result<(), Failure> {
    let manifest = Manifest::load(manifest_path)?;
    let weights = Weights::load(weights_dir)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let run = replay(&manifest, base, &weights)?;
    let name = manifest.input.path.file_stem().map_or("sketch".into(), |s| s.to_string_lossy().into_owned());
    write_outputs(out, &name, &run, None)?;
    eprintln!("replay reproduced {}", manifest.svg_sha256);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sketch(args) => cmd_sketch(args),
        Command::Restyle { svg, style, out } => cmd_restyle(&svg, &style, out.as_deref()),
        Command::Eval { pairs, out } => cmd_eval(&pairs, out.as_deref()),
        Command::Replay { manifest, out, weights_dir } => cmd_replay(&manifest, &out, &weights_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
