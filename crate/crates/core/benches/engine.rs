use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ringsource::collection::{coincidence_rates, Plane};
use ringsource::config::{parse_config, LoadOptions, SourceConfig, PAPER_JSON};
use ringsource::fourier::GridSpec;
use ringsource::par;
use ringsource::perfectring::{gaussian_ring, simulate_perfect_ring, Ensemble};
use ringsource::phasematch::{collimated_intensity, RadialGrid};

fn paper() -> SourceConfig {
    parse_config(PAPER_JSON, LoadOptions::default()).unwrap()
}

fn modes<F: Fn()>(c: &mut Criterion, group: &str, work: F) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("mode", "parallel"), |b| b.iter(&work));
    g.bench_function(BenchmarkId::new("mode", "sequential"), |b| {
        b.iter(|| par::sequential(&work))
    });
    g.finish();
}

fn bench_collimated(c: &mut Criterion) {
    let cfg = paper();
    let grid = RadialGrid { r_max_m: 8e-3, n: 4001 };
    modes(c, "collimated_intensity", || {
        collimated_intensity(&cfg.crystal, &cfg.pump, 24.0, cfg.layout.f1, 3.2, grid).unwrap();
    });
}

fn bench_coincidences(c: &mut Criterion) {
    let cfg = paper();
    let setup = cfg.collection_setup();
    let temps: Vec<f64> = (0..41).map(|k| 20.0 + 0.25 * k as f64).collect();
    let mmf = cfg.collection.mmf;
    modes(c, "coincidence_rates_mmf", || {
        coincidence_rates(&setup, Plane::Perfect, &mmf, &temps).unwrap();
    });
}

fn bench_perfect_ring(c: &mut Criterion) {
    let cfg = paper();
    let ring = gaussian_ring(3e-3, 0.3e-3, 8e-3, 1601).unwrap();
    let grid = GridSpec { n: 512, extent_m: 0.02 };
    let ensemble = Ensemble {
        patches: Some(16),
        realizations: 4,
        seed: 1,
        exact: false,
    };
    modes(c, "simulate_perfect_ring_512", || {
        simulate_perfect_ring(&cfg.layout, &ring, cfg.pump.degenerate_m(), grid, ensemble).unwrap();
    });
}

criterion_group!(benches, bench_collimated, bench_coincidences, bench_perfect_ring);
criterion_main!(benches);
