//! Regenerates `assets/`: the toy weights, the synthetic face and its
//! golden landmarks.

use sketch_core::synthetic::{face_landmarks, synthetic_face, write_toy_weights, FACE_SEED};
use sketch_core::weights::{bundled_face_path, bundled_weights_dir};

fn main() -> sketch_core::Result<()> {
    write_toy_weights(bundled_weights_dir())?;
    synthetic_face(224, FACE_SEED).save_png(bundled_face_path())?;
    let golden = bundled_face_path().with_file_name("golden");
    std::fs::create_dir_all(&golden)?;
    let pts: Vec<[f64; 2]> = face_landmarks().iter().map(|p| [p.x, p.y]).collect();
    std::fs::write(golden.join("landmarks.json"), serde_json::to_string_pretty(&pts)? + "\n")?;
    Ok(())
}
