use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pipesim_bench::{mlp, random_batches};
use pipesim_core::nn::SgdConfig;
use pipesim_core::pipeline::{run_pipeline, run_sequential, PipelineSchedule, RunOptions};
use pipesim_core::{StagePartition, WeightStrategy};

const MICROBATCHES: usize = 64;

fn strategies(c: &mut Criterion) {
    let batches = random_batches(1, MICROBATCHES, 32, 2, 5);
    let model = mlp(4, 2, 64, 5);
    let sched = PipelineSchedule::new(StagePartition::per_layer(4).unwrap(), MICROBATCHES);
    let mut group = c.benchmark_group("pipeline");
    group.throughput(Throughput::Elements(MICROBATCHES as u64));
    group.sample_size(20);
    for s in [WeightStrategy::ExactStash, WeightStrategy::Latest, WeightStrategy::FixedEma(0.9), WeightStrategy::PipelineAwareEma] {
        let opts = RunOptions { warmup: 0, ..RunOptions::new(SgdConfig::plain(0.05), s) };
        group.bench_with_input(BenchmarkId::from_parameter(s), &opts, |b, opts| {
            b.iter(|| run_pipeline(model.clone(), &sched, black_box(&batches), opts, &mut |_, _| Ok(())).unwrap())
        });
    }
    let opts = RunOptions::new(SgdConfig::plain(0.05), WeightStrategy::Latest);
    group.bench_function("sequential", |b| {
        b.iter(|| run_sequential(model.clone(), black_box(&batches), &opts, &mut |_, _| Ok(())).unwrap())
    });
    group.finish();
}

fn depth(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline-depth");
    group.sample_size(20);
    for layers in [2, 4, 8] {
        let batches = random_batches(2, MICROBATCHES, 16, 2, 3);
        let model = mlp(layers, 2, 32, 3);
        let sched = PipelineSchedule::new(StagePartition::per_layer(layers).unwrap(), MICROBATCHES);
        let opts = RunOptions::new(SgdConfig::plain(0.05), WeightStrategy::ExactStash);
        group.bench_with_input(BenchmarkId::from_parameter(layers), &sched, |b, sched| {
            b.iter(|| run_pipeline(model.clone(), sched, black_box(&batches), &opts, &mut |_, _| Ok(())).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, strategies, depth);
criterion_main!(benches);
