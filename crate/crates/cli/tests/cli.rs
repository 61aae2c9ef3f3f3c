use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/assets")
}

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_portrait-sketch"));
    cmd.env_remove("PORTRAIT_SKETCH_WEIGHTS");
    cmd
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Flags for a quick run: a 64 px canvas, 4 + 2 strokes, 20 iterations per round.
fn small_sketch(out_dir: &Path, weights: &Path) -> Command {
    let mut cmd = bin();
    cmd.arg("sketch")
        .arg(assets().join("synthetic_face.png"))
        .arg("--out")
        .arg(out_dir)
        .args(["--face", "4", "--contour", "2", "--iters", "20", "--resolution", "64", "--seed", "3"])
        .arg("--weights-dir")
        .arg(weights);
    cmd
}

#[test]
fn stroke_split_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sketch", "missing.png", "--strokes", "6", "--face", "3", "--contour", "2"])
        .arg("--out")
        .arg(dir.path())
        .arg("--weights-dir")
        .arg(dir.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("N_f + N_c must equal S"), "{}", stderr(&out));
}

#[test]
fn bad_block_count_lists_valid_values() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sketch", "missing.png", "--k", "5"])
        .arg("--out")
        .arg(dir.path())
        .arg("--weights-dir")
        .arg(dir.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let msg = stderr(&out);
    assert!(msg.contains("1, 4, 16, 49, 64, 196"), "{msg}");
}

#[test]
fn missing_weights_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = small_sketch(dir.path(), &missing).output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains(&missing.display().to_string()));
}

#[test]
fn weights_dir_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("from-env");
    let out = bin()
        .arg("sketch")
        .arg(assets().join("synthetic_face.png"))
        .arg("--out")
        .arg(dir.path())
        .env("PORTRAIT_SKETCH_WEIGHTS", &missing)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("from-env"));
}

/// Copies the bundled weights and overwrites the structure encoder's first
/// channel-weight tensor with NaN, so the first loss evaluation is non-finite.
fn poisoned_weights(dir: &Path) -> PathBuf {
    let dst = dir.join("weights");
    std::fs::create_dir_all(&dst).unwrap();
    for entry in std::fs::read_dir(assets().join("weights")).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
    let path = dst.join("structure_encoder.safetensors");
    let mut bytes = std::fs::read(&path).unwrap();
    let header_len = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let header = std::str::from_utf8(&bytes[8..8 + header_len]).unwrap();
    let entry = &header[header.find("\"lin.1\"").unwrap()..];
    let offsets = &entry[entry.find("\"data_offsets\":[").unwrap() + 16..];
    let (start, end) = offsets[..offsets.find(']').unwrap()].split_once(',').unwrap();
    let (start, end): (usize, usize) = (start.parse().unwrap(), end.parse().unwrap());
    for at in (8 + header_len + start..8 + header_len + end).step_by(4) {
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    }
    std::fs::write(&path, bytes).unwrap();
    dst
}

#[test]
fn non_finite_loss_exits_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let weights = poisoned_weights(dir.path());
    let out = small_sketch(&dir.path().join("out"), &weights).output().unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
    assert!(stderr(&out).contains("iteration 0"), "{}", stderr(&out));
}

#[test]
fn sketch_writes_outputs_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let style = dir.path().join("style.json");
    std::fs::write(&style, r#"{"color": [0.0, 0.0, 1.0], "opacity": 0.5}"#).unwrap();
    let out = small_sketch(&out_dir, &assets().join("weights"))
        .arg("--style")
        .arg(&style)
        .arg("--snapshots")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    for ext in ["svg", "png", "losses.csv", "losses.svg", "manifest.json", "styled.svg"] {
        assert!(out_dir.join(format!("synthetic_face.{ext}")).is_file(), "missing .{ext}");
    }
    // 20 iterations never reach the 100-iteration snapshot interval past frame 0.
    assert!(out_dir.join("synthetic_face.iter0000.png").is_file());

    let csv = std::fs::read_to_string(out_dir.join("synthetic_face.losses.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "iteration,l_clip,l_vgg,l_crop,l_sum,grad_norm");
    assert!(csv.lines().count() > 20);

    let svg = std::fs::read_to_string(out_dir.join("synthetic_face.svg")).unwrap();
    assert_eq!(svg.matches("<path").count(), 6);
    let styled = std::fs::read_to_string(out_dir.join("synthetic_face.styled.svg")).unwrap();
    assert!(styled.contains("#0000ff"));

    let manifest = std::fs::read_to_string(out_dir.join("synthetic_face.manifest.json")).unwrap();
    assert!(manifest.contains(&assets().join("synthetic_face.png").canonicalize().unwrap().display().to_string()));

    let replay_dir = dir.path().join("replay");
    let out = bin()
        .arg("replay")
        .arg(out_dir.join("synthetic_face.manifest.json"))
        .arg("--out")
        .arg(&replay_dir)
        .arg("--weights-dir")
        .arg(assets().join("weights"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(std::fs::read(replay_dir.join("synthetic_face.svg")).unwrap(), svg.as_bytes());

    // The sketch and the photo feed the evaluation command.
    let pairs = dir.path().join("pairs.csv");
    std::fs::write(
        &pairs,
        format!(
            "pair_id,budget,photo,sketch\n0,6,{},{}\n",
            assets().join("synthetic_face.png").display(),
            out_dir.join("synthetic_face.svg").display()
        ),
    )
    .unwrap();
    let out = bin().arg("eval").arg(&pairs).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let metrics = String::from_utf8(out.stdout).unwrap();
    assert!(metrics.starts_with("pair_id,budget,ssim,runtime_s"), "{metrics}");
}

#[test]
fn restyle_applies_a_style_file() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("in.svg");
    std::fs::write(
        &svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="224" height="224"><path d="M 10 10 C 20 20 30 20 40 10" stroke="#000000" stroke-width="1.5" fill="none"/></svg>"##,
    )
    .unwrap();
    let style = dir.path().join("style.json");
    std::fs::write(&style, r#"{"color": [1.0, 0.0, 0.0]}"#).unwrap();
    let out = bin().arg("restyle").arg(&svg).arg(&style).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8(out.stdout).unwrap().contains("#ff0000"));
}

#[test]
fn full_budget_split_gives_120_paths() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .arg("sketch")
        .arg(assets().join("synthetic_face.png"))
        .arg("--out")
        .arg(dir.path())
        .args(["--strokes", "120", "--face", "80", "--contour", "40", "--iters", "3"])
        .arg("--weights-dir")
        .arg(assets().join("weights"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let svg = std::fs::read_to_string(dir.path().join("synthetic_face.svg")).unwrap();
    assert_eq!(svg.matches("<path").count(), 120);
}

#[test]
fn width_override_updates_every_path() {
    let dir = tempfile::tempdir().unwrap();
    let svg = dir.path().join("in.svg");
    std::fs::write(
        &svg,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="100" height="100">
<path d="M 10 10 C 20 20 30 20 40 10" stroke="#000000" stroke-width="1.5" fill="none"/>
<path d="M 50 50 C 60 60 70 60 80 50" stroke="#000000" stroke-width="2.5" fill="none"/>
</svg>"##,
    )
    .unwrap();
    let style = dir.path().join("style.json");
    std::fs::write(&style, r#"{"width": 0.04}"#).unwrap();
    let out = bin().arg("restyle").arg(&svg).arg(&style).output().unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let doc = String::from_utf8(out.stdout).unwrap();
    assert_eq!(doc.matches("stroke-width=\"4.000000\"").count(), 2, "{doc}");
}
