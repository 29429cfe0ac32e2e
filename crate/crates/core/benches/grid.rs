use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use sdpbench::config::ExperimentConfig;
use sdpbench::grid::{plan, run_grid, Executor, GridContext};

fn grid_config(users: Vec<usize>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.load.users = users;
    cfg.load.fps = vec![1, 5];
    cfg
}

fn executors(c: &mut Criterion) {
    let mut group = c.benchmark_group("grid");
    group.sample_size(10);
    for users in [10, 50] {
        let cfg = grid_config(vec![users, users * 2]);
        let ctx = GridContext::from_config(&cfg).unwrap();
        let cells = plan(&cfg);
        group.throughput(Throughput::Elements(cells.len() as u64));
        for (name, exec) in [("sequential", Executor::Sequential), ("parallel", Executor::Parallel)] {
            group.bench_with_input(BenchmarkId::new(name, users), &cells, |b, cells| {
                b.iter(|| black_box(run_grid(&ctx, cells, exec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, executors);
criterion_main!(benches);
