use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use demian_core::baselines::{fit_cca, Ridge};
use demian_core::data::{planted_cca_views, synth_rotation_dataset, AngleSpec, SynthSpec};
use demian_core::demian::{Architecture, Demian, TrainConfig};
use demian_core::nn::Activation;
use demian_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

fn matmul(c: &mut Criterion) {
    let a = random(500, 392, 1);
    let b = random(392, 1000, 2);
    c.bench_function("matmul 500x392x1000", |bench| bench.iter(|| black_box(&a).matmul(black_box(&b)).unwrap()));
    let g = random(500, 1000, 3);
    c.bench_function("t_matmul 392x500x1000", |bench| bench.iter(|| a.t_matmul(black_box(&g)).unwrap()));
}

fn training_step(c: &mut Criterion) {
    let data = synth_rotation_dataset(&SynthSpec {
        n: 500,
        d: 64,
        angle: AngleSpec::Random,
        ..SynthSpec::default()
    })
    .unwrap();
    let arch = Architecture {
        gx: vec![64, 256, 32],
        gy: vec![64, 256, 32],
        disc_hidden: vec![256],
        activation: Activation::Relu,
        output_norm: false,
    };
    let mut model = Demian::new(&arch, &TrainConfig::default()).unwrap();
    c.bench_function("discriminator step n=500", |bench| {
        bench.iter(|| model.discriminator_step(&data.x, &data.y).unwrap())
    });
    c.bench_function("generator step n=500", |bench| {
        bench.iter(|| model.generator_step(&data.x, &data.y).unwrap())
    });
}

fn cca(c: &mut Criterion) {
    let (x, y) = planted_cca_views(5000, 100, 100, &[0.9, 0.5, 0.1], 4).unwrap();
    c.bench_function("fit_cca 5000x100 r=50", |bench| {
        bench.iter(|| fit_cca(black_box(&x), black_box(&y), 50, Ridge::default()).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = matmul, training_step, cca
}
criterion_main!(benches);
