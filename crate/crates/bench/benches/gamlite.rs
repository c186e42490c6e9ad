use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use sentread_bench::feature_rows;
use sentread_core::gamlite::{lambda_grid, Design, FitOptions, ModelSpec, DEFAULT_K};
use sentread_core::pipeline::{evaluate_rows, EvaluateOptions};
use sentread_core::{SynthCorpus, SynthSpec};

fn fitting(c: &mut Criterion) {
    let rows = feature_rows(2000, 1);
    let spec = ModelSpec::base(DEFAULT_K).with_metric("m", DEFAULT_K);
    c.bench_function("design build/2000 rows", |b| b.iter(|| Design::build(&spec, black_box(&rows))));

    let design = Design::build(&spec, &rows).unwrap();
    let grid = lambda_grid();
    let options = FitOptions::default();
    c.bench_function("lambda selection/2000 rows", |b| {
        b.iter(|| design.select_lambda(black_box(&grid), &options))
    });
}

fn evaluation(c: &mut Criterion) {
    let corpus = SynthCorpus::generate(&SynthSpec::with_seed(1)).unwrap();
    let opts = EvaluateOptions::default();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    group.bench_function("synthetic corpus", |b| {
        b.iter(|| evaluate_rows(black_box(&corpus.metrics), &corpus.reading, &opts, 1))
    });
    group.finish();
}

criterion_group!(benches, fitting, evaluation);
criterion_main!(benches);
