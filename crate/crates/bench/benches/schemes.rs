use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use helenos::store::LoopbackCluster;
use helenos::workload::{run_scenario, Preset, RunOptions};
use helenos::Scheme;

/// One zero-delay Standard run of 8 clients x 10 tasks per iteration; this
/// measures the protocol and scheme overhead rather than simulated latency.
fn bench_schemes(c: &mut Criterion) {
    let mut group = c.benchmark_group("standard scenario, 8 clients x 10 tasks");
    group.sample_size(20).measurement_time(Duration::from_secs(10));
    for scheme in Scheme::ALL {
        let mut cfg = Preset::Standard.config();
        cfg.scheme = scheme;
        cfg.clients = 8;
        cfg.tasks = 10;
        cfg.delay_ms = 0.0;
        group.bench_with_input(BenchmarkId::from_parameter(scheme), &cfg, |b, cfg| {
            b.iter(|| {
                let cluster = LoopbackCluster::new(cfg.nodes, cfg.buckets, cfg.delay()).unwrap();
                run_scenario(&cluster, cfg, RunOptions::default()).unwrap().report.commits
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_schemes);
criterion_main!(benches);
