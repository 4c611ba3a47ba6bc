use bglab_core::dynamics::evolve;
use bglab_core::fields::{catalog, fluctuation_field};
use bglab_core::par::{map_range, Execution};
use bglab_core::rng::stream_rng;
use bglab_core::sampler::{sample_with, GrandCanonicalParams, SamplerOptions};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

// One replica: equilibrium draw, evolve to t = 0.5, read one field.
fn replica_batch(exec: Execution, n: usize) -> f64 {
    let p = GrandCanonicalParams::<3>::boltzmann_grad(0.1).unwrap();
    let h = catalog::shear::<3>();
    map_range(exec, n, |r| {
        let c = sample_with(&p, &SamplerOptions::default(), &mut stream_rng(7, r as u64)).unwrap();
        let (s, _) = evolve(&c, 0.5).unwrap();
        fluctuation_field(&s, &h, p.mu).unwrap()
    })
    .iter()
    .sum()
}

fn bench_replicas(c: &mut Criterion) {
    let mut g = c.benchmark_group("replicas");
    g.sample_size(10);
    for n in [16usize, 64] {
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| b.iter(|| black_box(replica_batch(exec, n))));
        }
    }
    g.finish();
}

criterion_group!(benches, bench_replicas);
criterion_main!(benches);
