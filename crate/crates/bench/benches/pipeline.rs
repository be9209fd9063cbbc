use criterion::{criterion_group, criterion_main, Criterion};
use gemtomo::forward::{forward_fft, forward_splitstep};
use gemtomo::heterodyne::{demodulate, synthesize_frames};
use gemtomo::reconstruct::reconstruct;
use gemtomo::{DetectorConfig, ReconstructOptions};
use gemtomo_bench::{checkerboard_scene, K0};
use ndarray::Axis;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    g.sample_size(10);
    let full = checkerboard_scene(64, 256, 600);
    g.bench_function("fft_64x64x256_600", |b| {
        b.iter(|| forward_fft(&full.spin_wave, &full.physics, &full.times, &full.forward).unwrap())
    });
    let small = checkerboard_scene(16, 64, 128);
    g.bench_function("splitstep_16x16x64_128", |b| {
        b.iter(|| forward_splitstep(&small.spin_wave, &small.physics, &small.times, &small.forward).unwrap())
    });
    g.finish();
}

fn inverse(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruct");
    g.sample_size(10);
    let sc = checkerboard_scene(64, 256, 600);
    let sig = forward_fft(&sc.spin_wave, &sc.physics, &sc.times, &sc.forward).unwrap();
    let opt = ReconstructOptions { decoherence: None, z_axis: Some(sc.spin_wave.grid().z) };
    g.bench_function("64x64x256_600", |b| b.iter(|| reconstruct(&sig, &sc.physics, &sc.calib, &opt).unwrap()));
    g.finish();
}

fn heterodyne(c: &mut Criterion) {
    let sc = checkerboard_scene(64, 256, 600);
    let sig = forward_fft(&sc.spin_wave, &sc.physics, &sc.times, &sc.forward).unwrap();
    let slice = sig.values().index_axis(Axis(2), 300).to_owned();
    let mut cfg = DetectorConfig::far_field(&sig.kx, &sig.ky, K0, 0.25, 0.19e-3, 100.0).unwrap();
    cfg.shot_noise = true;
    let pair = synthesize_frames(&slice, &cfg).unwrap().remove(0);
    c.bench_function("heterodyne/synthesize_64x64", |b| b.iter(|| synthesize_frames(&slice, &cfg).unwrap()));
    c.bench_function("heterodyne/demodulate_64x64", |b| b.iter(|| demodulate(&pair, &cfg).unwrap()));
}

criterion_group!(benches, forward, inverse, heterodyne);
criterion_main!(benches);
