//! The model files a run needs, resolved from one directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keypoints::{PaletteParser, TemplateLandmarker};
use crate::nn::Encoder;

pub const SEMANTIC_FILE: &str = "semantic_encoder.safetensors";
pub const STRUCTURE_FILE: &str = "structure_encoder.safetensors";
pub const LANDMARKER_FILE: &str = "landmarker.json";
pub const PARSER_FILE: &str = "parser.json";

pub const ALL_FILES: [&str; 4] = [SEMANTIC_FILE, STRUCTURE_FILE, LANDMARKER_FILE, PARSER_FILE];

/// SHA-256 of one weight file, keyed by file name.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug)]
pub struct Weights {
    pub dir: PathBuf,
    pub semantic: Encoder,
    pub structure: Encoder,
    pub landmarker: TemplateLandmarker,
    pub parser: PaletteParser,
    pub digests: Vec<WeightDigest>,
}

impl Weights {
    /// Checks that the directory and every file exist before parsing any.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        if !dir.is_dir() {
            return Err(Error::WeightsNotFound(dir.to_path_buf()));
        }
        if let Some(missing) = ALL_FILES.iter().map(|f| dir.join(f)).find(|p| !p.is_file()) {
            return Err(Error::WeightsNotFound(missing));
        }
        let digests = ALL_FILES
            .iter()
            .map(|f| {
                let bytes = std::fs::read(dir.join(f))?;
                Ok(WeightDigest { file: f.to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
            })
            .collect::<Result<Vec<_>>>()?;
        let semantic = Encoder::load(dir.join(SEMANTIC_FILE))?;
        if !semantic.has_projection() {
            return Err(Error::BadWeights { path: dir.join(SEMANTIC_FILE), message: "no projection head".into() });
        }
        let structure = Encoder::load(dir.join(STRUCTURE_FILE))?;
        if structure.lin().is_none() {
            return Err(Error::BadWeights {
                path: dir.join(STRUCTURE_FILE),
                message: "no lin.* channel weights".into(),
            });
        }
        Ok(Weights {
            dir: dir.to_path_buf(),
            semantic,
            structure,
            landmarker: TemplateLandmarker::load(dir.join(LANDMARKER_FILE))?,
            parser: PaletteParser::load(dir.join(PARSER_FILE))?,
            digests,
        })
    }
}

/// Directory of the toy weights shipped with the crate.
pub fn bundled_weights_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join("weights")
}

/// The bundled synthetic face photograph.
pub fn bundled_face_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets").join("synthetic_face.png")
}
