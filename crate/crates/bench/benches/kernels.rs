use std::hint::black_box;
use std::sync::Arc;

use calderon::carleman::build_green_pair;
use calderon::forward::{assemble_dn_map, Potential};
use calderon::geometry::{trace_geodesic, DiskMesh, TransversalManifold};
use calderon::quasimodes::{build_quasimode, SpectralParameter};
use calderon::raytransform::{forward_ray, invert_ray};
use calderon::Complex64;
use calderon_bench::{bench_config, bench_mesh};
use criterion::{criterion_group, criterion_main, Criterion};

fn kernels(c: &mut Criterion) {
    let cfg = bench_config();
    let mesh = bench_mesh();
    let q = Potential::from_spec(&mesh, &cfg.potential).unwrap();
    let opts = cfg.green_options();
    let m0 = TransversalManifold::flat();

    c.bench_function("dn_map_assembly", |b| b.iter(|| assemble_dn_map(black_box(&mesh), &q).unwrap()));
    c.bench_function("green_pair_h0.1", |b| b.iter(|| build_green_pair(black_box(&mesh), 0.1, &opts).unwrap()));

    let geodesic = trace_geodesic(&m0, 0.7, 0.3).unwrap();
    let sp = SpectralParameter::new(0.1, 0.5).unwrap();
    c.bench_function("gaussian_beam", |b| b.iter(|| build_quasimode(&m0, black_box(&geodesic), sp, cfg.beam).unwrap()));

    let grid = cfg.geodesic_grid();
    let f = |p: [f64; 2]| Complex64::new((-(p[0] * p[0] + p[1] * p[1]) / 0.18).exp(), 0.0);
    let disk = Arc::new(DiskMesh::rings(cfg.slice_rings).unwrap());
    let samples = forward_ray(&f, &grid, &m0).unwrap();
    let mut group = c.benchmark_group("ray_transform");
    group.sample_size(10);
    group.bench_function("forward_60x60", |b| b.iter(|| forward_ray(&f, black_box(&grid), &m0).unwrap()));
    group.bench_function("fbp_60x60", |b| b.iter(|| invert_ray(black_box(&samples), disk.clone(), &m0).unwrap()));
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
