use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gsflow::control::Mlp;
use gsflow::discovery::hdbscan::core_distances;
use gsflow::exec;
use gsflow::render::{render_with, RenderConfig};
use gsflow::scene::presets::{Preset, PresetKind};
use gsflow::scene::Intrinsics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, bool); 2] = [("serial", true), ("parallel", false)];

fn render_tiles(c: &mut Criterion) {
    let preset = Preset::new(PresetKind::TwoObjects);
    let scene = preset.scene.sample_at(0.0).unwrap();
    let mut cam = preset.camera_path.camera(0.0);
    cam.intrinsics = Intrinsics::new(256.0, 256.0, 128.0, 128.0, 256, 256).unwrap();
    let cfg = RenderConfig::default();
    let mut g = c.benchmark_group("render_256");
    for (name, serial) in MODES {
        exec::set_serial(serial);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| render_with(&scene, &cam, &cfg).unwrap())
        });
    }
    exec::set_serial(false);
    g.finish();
}

fn hdbscan_core_distances(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let points: Vec<[f64; 3]> = (0..2000)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let mut g = c.benchmark_group("core_distances_2000");
    for (name, serial) in MODES {
        exec::set_serial(serial);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| core_distances(&points, 5))
        });
    }
    exec::set_serial(false);
    g.finish();
}

fn mlp_batch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mlp = Mlp::new(72, 64, 4, 10, &mut rng);
    let rows = 4096;
    let x: Vec<f64> = (0..rows * 72).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut g = c.benchmark_group("mlp_batch_4096");
    for (name, serial) in MODES {
        exec::set_serial(serial);
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| mlp.forward_batch(&x, rows))
        });
    }
    exec::set_serial(false);
    g.finish();
}

criterion_group!(benches, render_tiles, hdbscan_core_distances, mlp_batch);
criterion_main!(benches);
