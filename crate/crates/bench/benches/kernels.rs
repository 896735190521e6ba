use criterion::{black_box, criterion_group, criterion_main, Criterion};

use codsa_bench::{classification_train, latents, regression_train};
use codsa_core::estimators::{train_forest, ForestConfig};
use codsa_core::generator::{train_score_network, DiffusionConfig, ScheduleParams};
use codsa_core::nncore::{Head, Mlp, MlpSpec};
use codsa_core::rng::SeedStream;
use ndarray::Array2;

fn mlp_forward(c: &mut Criterion) {
    let net = Mlp::new(MlpSpec::new(vec![10, 128, 128, 1], Head::Sigmoid).unwrap(), &mut SeedStream::new(1).rng()).unwrap();
    let x = classification_train(0).features().clone();
    c.bench_function("mlp_forward_4k_rows", |b| b.iter(|| net.forward(black_box(x.view())).unwrap()));
}

fn diffusion(c: &mut Criterion) {
    let (z, regions) = latents(1024, 3);
    let cfg = DiffusionConfig {
        hidden: 128,
        depth: 3,
        embed_dim: 32,
        schedule: ScheduleParams { timesteps: 100, beta_min: 1e-3, beta_max: 0.2 },
        epochs: 2,
        lr: 1e-3,
        batch_size: 256,
        ema_decay: 0.999,
    };
    let mut g = c.benchmark_group("diffusion");
    g.sample_size(10);
    g.bench_function("train_2_epochs_1k", |b| b.iter(|| train_score_network(z.view(), &regions, 2, &cfg, SeedStream::new(2)).unwrap()));
    let model = train_score_network(z.view(), &regions, 2, &cfg, SeedStream::new(2)).unwrap();
    g.bench_function("sample_256_latents", |b| b.iter(|| model.sample_latents(1, 256, SeedStream::new(3)).unwrap()));
    g.finish();
}

fn forest(c: &mut Criterion) {
    let train = regression_train(0);
    let cfg = ForestConfig { n_trees: 10, ..ForestConfig::default() };
    let model = train_forest(&train, &cfg, SeedStream::new(4)).unwrap();
    let rows: Array2<f64> = train.features().clone();
    let mut g = c.benchmark_group("forest");
    g.sample_size(10);
    g.bench_function("fit_10_trees", |b| b.iter(|| train_forest(black_box(&train), &cfg, SeedStream::new(4)).unwrap()));
    g.bench_function("predict", |b| b.iter(|| model.predict(black_box(rows.view())).unwrap()));
    g.finish();
}

criterion_group!(benches, mlp_forward, diffusion, forest);
criterion_main!(benches);
