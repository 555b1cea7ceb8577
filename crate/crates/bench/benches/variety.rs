use std::hint::black_box;

use causal_variety::coarse::{discrete_acausal_variety, quantile_samples, rank_window_pasts, Shell};
use causal_variety::ecs::generate_layered;
use causal_variety::energy::{kinetic_energy, potential_energy};
use causal_variety::{DensityModel, EnergeticCausalSet, LayeredConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn history(layers: usize, events_per_layer: usize) -> EnergeticCausalSet {
    generate_layered(&LayeredConfig { d: 1, layers, events_per_layer, n_pre: 2, seed: 1, ..Default::default() })
        .expect("valid generator config")
}

fn pair_sums(c: &mut Criterion) {
    let mut group = c.benchmark_group("pair_sums");
    for events_per_layer in [10, 30, 100] {
        let ecs = history(20, events_per_layer);
        let relations = ecs.causal_relations().unwrap();
        let n = ecs.len() as u64;
        group.throughput(Throughput::Elements(n * (n - 1) / 2));
        group.bench_with_input(BenchmarkId::new("total_variety", n), &ecs, |b, ecs| {
            b.iter(|| ecs.total_variety(black_box(2.0)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("potential_energy", n), &ecs, |b, ecs| {
            b.iter(|| potential_energy(black_box(ecs), &relations).unwrap())
        });
        group.throughput(Throughput::Elements(ecs.links().len() as u64));
        group.bench_with_input(BenchmarkId::new("kinetic_energy", n), &ecs, |b, ecs| {
            b.iter(|| kinetic_energy(black_box(ecs)))
        });
    }
    group.finish();
}

fn causal_relations(c: &mut Criterion) {
    let ecs = history(100, 100);
    c.bench_function("causal_relations/10000", |b| b.iter(|| black_box(&ecs).causal_relations().unwrap()));
}

fn discrete_variety(c: &mut Criterion) {
    let mut group = c.benchmark_group("discrete_variety");
    let model = DensityModel::Gaussian { mu: 0.0, sigma: 1.0 };
    for n in [1_000, 10_000] {
        let samples = quantile_samples(&model, n, 1).unwrap();
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &samples, |b, samples| {
            b.iter(|| {
                let pasts = rank_window_pasts(black_box(samples), 1, None).unwrap();
                discrete_acausal_variety(&pasts, &Shell::Unbounded).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = pair_sums, causal_relations, discrete_variety
}
criterion_main!(benches);
