//! Criterion benchmarks of the pipeline's hot paths: scene synthesis, dead
//! reckoning, forward passes, Monte-Carlo fusion, stochastic box rollouts,
//! the scoring metrics, and one real training epoch.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use egocast_bench::{fixture, scenes};
use egocast_core::ego::{dead_reckon_poses, fuse_passes, EgoModel, Pose2D};
use egocast_core::eval::{ade_fde, fiou};
use egocast_core::loc::{BoxState, LocModel, SampleSettings};
use egocast_core::nn::DropoutSpec;
use egocast_core::synth::{generate_scene, EgoKind, ScenarioConfig, TargetKind};
use egocast_core::train::{train_ego, ModelVariant, PriorSource, TrainConfig, UncMode};
use egocast_core::uncertainty::{fuse, Gauss2D};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn bench_scene_gen(c: &mut Criterion) {
    let cfg = ScenarioConfig::for_kinds(EgoKind::LeftTurn, TargetKind::Oncoming);
    c.bench_function("scene_gen", |b| {
        b.iter(|| generate_scene(black_box(&cfg), black_box(11)).unwrap())
    });
}

fn bench_dead_reckon(c: &mut Criterion) {
    let f = fixture();
    let start = Pose2D::identity();
    c.bench_function("dead_reckon_full_scene", |b| {
        b.iter(|| dead_reckon_poses(black_box(&f.scene.odom), black_box(&start)))
    });
}

fn bench_ego_forward(c: &mut Criterion) {
    let f = fixture();
    let model = EgoModel::new(f.ego_cfg);
    let obs = &f.scene.odom[..f.ego_cfg.t_obs];
    let off = DropoutSpec::off();
    c.bench_function("ego_forward_pass", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        b.iter(|| model.run(black_box(&f.params), black_box(obs), &off, &mut rng))
    });
}

fn bench_ego_forecast(c: &mut Criterion) {
    let f = fixture();
    let model = EgoModel::new(f.ego_cfg);
    let obs = &f.scene.odom[..f.ego_cfg.t_obs];
    let mut group = c.benchmark_group("ego_forecast");
    group.sample_size(20);
    group.bench_function("k10_n20", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        b.iter(|| model.forecast(black_box(&f.params), black_box(obs), 10, 20, &mut rng))
    });
    group.finish();
}

fn bench_box_rollout(c: &mut Criterion) {
    let f = fixture();
    let ego = EgoModel::new(f.ego_cfg);
    let loc = LocModel::new(f.loc_cfg);
    let t_obs = f.loc_cfg.t_obs;
    let track = &f.scene.targets[0];
    let boxes = &track.boxes[..t_obs];
    let flows = &track.flows[..t_obs];

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let forecast = ego.forecast(&f.params, &f.scene.odom[..t_obs], 10, 20, &mut rng);

    let mut group = c.benchmark_group("box_rollout");
    group.sample_size(10);
    group.bench_function("k10_mc20", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        b.iter(|| {
            loc.sample_trajectories(
                black_box(&f.params),
                black_box(boxes),
                black_box(flows),
                &forecast.modes,
                &SampleSettings::mc(20),
                &mut rng,
            )
        })
    });
    group.finish();
}

fn bench_fusion(c: &mut Criterion) {
    let passes: Vec<Vec<Gauss2D>> = (0..20)
        .map(|p| {
            (0..20)
                .map(|t| {
                    Gauss2D::from_head(&[
                        (p as f64).sin() + t as f64,
                        (t as f64).cos(),
                        -1.0 + 0.01 * p as f64,
                        -2.0,
                        0.1,
                    ])
                })
                .collect()
        })
        .collect();
    c.bench_function("fuse_20_passes_h20", |b| {
        b.iter(|| fuse_passes(black_box(&passes), true))
    });

    let samples: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
        .map(|i| (vec![i as f64, 1.0, 2.0, 3.0], vec![0.1, 0.2, 0.3, 0.4]))
        .collect();
    c.bench_function("fuse_single_step", |b| b.iter(|| fuse(black_box(&samples)).unwrap()));
}

fn bench_metrics(c: &mut Criterion) {
    let pred: Vec<[f64; 2]> = (0..20).map(|i| [i as f64, (i as f64).sin()]).collect();
    let gt: Vec<[f64; 2]> = (0..20).map(|i| [i as f64 + 0.5, (i as f64).cos()]).collect();
    c.bench_function("ade_fde_h20", |b| {
        b.iter(|| ade_fde(black_box(&pred), black_box(&gt)).unwrap())
    });

    let a = BoxState::new(960.0, 600.0, 200.0, 150.0);
    let b2 = BoxState::new(1000.0, 630.0, 180.0, 140.0);
    c.bench_function("fiou", |b| b.iter(|| fiou(black_box(&a), black_box(&b2))));

    let g = Gauss2D::from_head(&[0.3, -0.2, -1.0, -2.0, 0.1]);
    c.bench_function("gauss2d_nll", |b| b.iter(|| black_box(&g).nll(black_box([0.5, 0.1]))));
}

fn bench_train_epoch(c: &mut Criterion) {
    let data = scenes(20);
    let (train, val) = data.split_at(16);
    let cfg = TrainConfig { ego_epochs: 1, ..TrainConfig::default() };
    let model = EgoModel::new(Default::default());
    let variant = ModelVariant::new("bench", UncMode::AleatoricEpistemic, PriorSource::None);
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("ego_epoch_16_scenes", |b| {
        b.iter(|| train_ego(&model, black_box(train), black_box(val), &cfg, &variant).unwrap())
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_scene_gen,
    bench_dead_reckon,
    bench_ego_forward,
    bench_ego_forecast,
    bench_box_rollout,
    bench_fusion,
    bench_metrics,
    bench_train_epoch
);
criterion_main!(benches);
