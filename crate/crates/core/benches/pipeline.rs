use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fpr_core::benchmark::{build_supervised, mine_supervised, split_supervised, SupervisedParams};
use fpr_core::dataio::{SynthParams, SyntheticWorld};
use fpr_core::descriptor::{extract_batch, DescriptorConfig, DescriptorSet};
use fpr_core::exec::Execution;
use fpr_core::geometry::{spherical_projection, RangeImage};
use fpr_core::retrieval::{build_index, evaluate_recall, DEFAULT_KS};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

struct Fixture {
    world: SyntheticWorld,
    images: Vec<RangeImage>,
    ids: Vec<String>,
}

fn fixture() -> Fixture {
    let world = SyntheticWorld::new(&SynthParams::default()).expect("world");
    let cfg = world.lidar.spherical;
    let samples: Vec<_> = world.scenes.iter().flat_map(|s| &s.samples).collect();
    let images = samples
        .iter()
        .map(|s| spherical_projection(&world.scan(&s.pose).0, &cfg))
        .collect();
    let ids = samples.iter().map(|s| s.id.clone()).collect();
    Fixture { world, images, ids }
}

fn pipeline(c: &mut Criterion) {
    let fx = fixture();
    let cfg = DescriptorConfig::default();

    let mut group = c.benchmark_group("describe");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| extract_batch(black_box(&fx.images), &cfg, exec).unwrap())
        });
    }
    group.finish();

    let descriptors = extract_batch(&fx.images, &cfg, Execution::Sequential).unwrap();
    let mut set = DescriptorSet::new(cfg.dim);
    for (id, d) in fx.ids.iter().zip(descriptors) {
        set.insert(id.clone(), d).unwrap();
    }
    let params = SupervisedParams::with_gamma(fx.world.gamma());
    let (split, part) = build_supervised(&fx.world.scenes, &params, Execution::Sequential).unwrap();
    let index = build_index(&set, &split.database).unwrap();

    let mut group = c.benchmark_group("evaluate");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_recall(&index, black_box(&split.test), &set, &DEFAULT_KS, exec).unwrap())
        });
    }
    group.finish();

    let mut group = c.benchmark_group("mine");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mine_supervised(black_box(&part.database), &part.train_queries, &params, exec))
        });
    }
    group.finish();

    c.bench_function("split_supervised", |b| {
        b.iter(|| split_supervised(black_box(&fx.world.scenes), &params))
    });
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
