//! Hot kernels on a one-thread rayon pool, which takes the sequential path,
//! against the same kernels on the default pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sketch_core::keypoints::{detect_landmarks, fps_points, init_strokes};
use sketch_core::render::{Rasterizer, SoftRasterizer};
use sketch_core::synthetic::{synthetic_face, toy_landmarker, toy_semantic_encoder};
use sketch_core::{RasterImage, RoundTag, SketchCanvas};

const SIZE: usize = 224;

fn canvas(photo: &RasterImage) -> SketchCanvas {
    let pool = detect_landmarks(photo, &toy_landmarker().unwrap()).unwrap();
    let mut strokes = init_strokes(&fps_points(&pool, 40).unwrap(), RoundTag::Face, 0);
    for s in &mut strokes {
        s.width = 1.5 / SIZE as f64;
    }
    SketchCanvas::with_strokes(SIZE as u32, SIZE as u32, strokes)
}

fn pools() -> Vec<(String, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("sequential".into(), one), (format!("rayon-{}", default.current_num_threads()), default)]
}

fn bench(c: &mut Criterion) {
    let photo = synthetic_face(SIZE, 0);
    let canvas = canvas(&photo);
    let raster = SoftRasterizer::default();
    let image = raster.forward(&canvas).unwrap();
    let pixel_grad = RasterImage::filled(SIZE, SIZE, 3, 0.01);
    let encoder = toy_semantic_encoder().unwrap();
    let acts = encoder.forward(&image);

    let mut group = c.benchmark_group("kernels");
    group.sample_size(20);
    for (name, pool) in pools() {
        group.bench_with_input(BenchmarkId::new("raster_forward", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| raster.forward(&canvas).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("raster_backward", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| raster.backward(&canvas, &pixel_grad).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("encoder_forward", &name), &pool, |b, pool| {
            b.iter(|| pool.install(|| encoder.forward(&image)))
        });
        group.bench_with_input(BenchmarkId::new("encoder_backward", &name), &pool, |b, pool| {
            let grads = acts.blocks.iter().map(|m| Some(m.clone())).collect::<Vec<_>>();
            b.iter(|| pool.install(|| encoder.backward(&acts, grads.clone())))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
