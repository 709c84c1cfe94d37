use criterion::{black_box, criterion_group, criterion_main, Criterion};
use mfpt_bench::{fixture_image, fixture_masks};
use mfpt_core::eval::{confusion, metrics};
use mfpt_core::frequency::{highpass_prompt, to_grayscale, DEFAULT_CUTOFF};
use mfpt_core::model::{Mfpt, MfptConfig};

fn forward(c: &mut Criterion) {
    let model = Mfpt::new(MfptConfig::default(), 0).unwrap();
    let image = fixture_image(64, 64);
    c.bench_function("forward_64x64", |b| b.iter(|| model.forward(black_box(&image)).unwrap()));
}

fn highpass(c: &mut Criterion) {
    let gray = to_grayscale(&fixture_image(256, 256));
    c.bench_function("highpass_256x256", |b| {
        b.iter(|| highpass_prompt(black_box(&gray), DEFAULT_CUTOFF).unwrap())
    });
}

fn pixel_metrics(c: &mut Criterion) {
    let (pred, gt) = fixture_masks(512, 512);
    c.bench_function("metrics_512x512", |b| {
        b.iter(|| metrics(&confusion(black_box(&pred), black_box(&gt)).unwrap()))
    });
}

criterion_group!(benches, forward, highpass, pixel_metrics);
criterion_main!(benches);
