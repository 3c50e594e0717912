//! Timings for the pipeline's hot paths: convolution kernels, the
//! correspondence search, robust homography estimation, band warping, and
//! full network passes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use ludvision::align::{
    estimate_homography, find_correspondences, warp_band, Correspondence, Homography,
    RansacConfig, DEFAULT_GRID_STEP, DEFAULT_SEARCH_RADIUS, DEFAULT_WINDOW,
};
use ludvision::model::{build_model, ModelConfig};
use ludvision::raster::{Band, LabelMask, MultispectralImage};
use ludvision::tensor::{conv2d, ConvSpec, Tensor4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Textured synthetic world; rich enough for the correspondence search to
/// lock onto.
fn world(x: f64, y: f64) -> f64 {
    0.5 + 0.17 * (0.219 * x + (0.093 * y).sin()).sin()
        + 0.14 * (0.157 * y + 0.8).cos()
        + 0.11 * (0.083 * (x + 0.7 * y)).sin()
        + 0.06 * (0.311 * x).cos() * (0.271 * y).sin()
}

fn textured_band(w: usize, h: usize, ox: f64, oy: f64) -> Band {
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            data.push(world(x as f64 + ox, y as f64 + oy).clamp(0.0, 1.0) as f32);
        }
    }
    Band::new(w, h, data).unwrap()
}

fn rand_tensor(rng: &mut ChaCha20Rng, dims: [usize; 4]) -> Tensor4 {
    let len = dims.iter().product();
    Tensor4::new(dims, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn convolutions(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    // The three shapes that dominate a forward pass: the stem over a large
    // grid, a dilated mid-stage block, and the wide 1x1 head projection.
    let cases = [
        ("conv 5to8 3x3 128x128", [1, 5, 128, 128], [8, 5, 3, 3], ConvSpec::new(5, 8, 3).padding(1)),
        (
            "conv 32to32 3x3 d2 32x32",
            [1, 32, 32, 32],
            [32, 32, 3, 3],
            ConvSpec::new(32, 32, 3).dilation(2).padding(2),
        ),
        (
            "conv 120to2 1x1 64x64",
            [1, 120, 64, 64],
            [2, 120, 1, 1],
            ConvSpec::new(120, 2, 1).bias(true),
        ),
    ];
    for (name, xd, wd, spec) in cases {
        let x = rand_tensor(&mut rng, xd);
        let w = rand_tensor(&mut rng, wd);
        let bias = spec.has_bias.then(|| vec![0.1; spec.out_channels]);
        c.bench_function(name, |b| {
            b.iter(|| conv2d(black_box(&x), black_box(&w), bias.as_deref(), &spec).unwrap())
        });
    }
}

fn correspondence_search(c: &mut Criterion) {
    let reference = textured_band(400, 320, 0.0, 0.0);
    let target = textured_band(400, 320, 4.0, -3.0);
    c.bench_function("ncc search 400x320", |b| {
        b.iter(|| {
            find_correspondences(
                black_box(&reference),
                black_box(&target),
                DEFAULT_GRID_STEP,
                DEFAULT_WINDOW,
                DEFAULT_SEARCH_RADIUS,
            )
            .unwrap()
        })
    });
}

fn robust_estimation(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let truth = Homography::new([[1.01, -0.02, 5.0], [0.02, 0.99, -3.0], [1e-6, -2e-6, 1.0]])
        .unwrap();
    let mut pairs = Vec::new();
    for i in 0..60 {
        let tx = rng.gen_range(20.0..760.0);
        let ty = rng.gen_range(20.0..560.0);
        let (mut rx, mut ry) = truth.apply(tx, ty);
        if i % 4 == 3 {
            rx += rng.gen_range(15.0..60.0);
            ry -= rng.gen_range(15.0..60.0);
        }
        pairs.push(Correspondence {
            ref_xy: (rx, ry),
            tgt_xy: (tx, ty),
            score: 0.9,
        });
    }
    c.bench_function("ransac homography 60 pairs", |b| {
        b.iter(|| estimate_homography(black_box(&pairs), &RansacConfig::default()).unwrap())
    });

    let band = textured_band(400, 320, 0.0, 0.0);
    c.bench_function("warp band 400x320", |b| {
        b.iter(|| warp_band(black_box(&band), &truth, (400, 320)).unwrap())
    });
}

fn network_passes(c: &mut Criterion) {
    let model = build_model(ModelConfig::default()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let batch = rand_tensor(&mut rng, [1, 5, 64, 64]);
    c.bench_function("model forward 64x64", |b| {
        b.iter(|| model.forward(black_box(&batch)).unwrap())
    });

    let mut mask = LabelMask::filled(64, 64, 0);
    for v in mask.data.iter_mut() {
        *v = rng.gen_range(0..2);
    }
    let masks = vec![mask];
    c.bench_function("model loss and gradients 64x64", |b| {
        b.iter(|| model.loss_and_gradients(black_box(&batch), &masks).unwrap())
    });

    let bands = ludvision::raster::default_bands();
    let mut data = Vec::with_capacity(5 * 96 * 96);
    for b in 0..5 {
        for y in 0..96 {
            for x in 0..96 {
                data.push((world(x as f64 * 0.9 + b as f64, y as f64 * 0.9) * 0.8) as f32);
            }
        }
    }
    let image = MultispectralImage::new(96, 96, bands, data).unwrap();
    let mut normalized = model.clone();
    normalized
        .set_normalization(ludvision::model::band_statistics(&[&image]).unwrap())
        .unwrap();
    c.bench_function("tiled prediction 96x96", |b| {
        b.iter(|| normalized.predict_mask(black_box(&image), 64, 16).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = convolutions, correspondence_search, robust_estimation, network_passes
}
criterion_main!(benches);
