//! One worker against all cores for the data-parallel stages.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use texmap::camera::PinholeCamera;
use texmap::dt::distance_transform;
use texmap::mesh::{AdjacencyGraph, Vec3};
use texmap::mrf::{lbp_solve, CostVolume, LbpParams};
use texmap::par;
use texmap::pipeline::{texture_views, PipelineConfig};
use texmap::synth::{self, Pattern, SceneSpec, Shape};
use texmap::visibility::rasterize_depth;

fn worker_counts() -> Vec<(&'static str, usize)> {
    vec![("serial", 1), ("parallel", 0)]
}

fn grid_mrf(side: usize, labels: u32, seed: u64) -> (AdjacencyGraph, CostVolume) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for y in 0..side {
        for x in 0..side {
            let f = y * side + x;
            if x + 1 < side {
                edges.push((f, f + 1));
            }
            if y + 1 < side {
                edges.push((f, f + side));
            }
        }
    }
    let costs = (0..side * side)
        .map(|_| (0..labels).map(|l| (l, rng.random::<f64>())).collect())
        .collect();
    (AdjacencyGraph::from_edges(side * side, edges), CostVolume::new(costs).unwrap())
}

fn bench_lbp(c: &mut Criterion) {
    let (graph, costs) = grid_mrf(128, 6, 1);
    let params = LbpParams { max_iters: 20, ..Default::default() };
    let mut g = c.benchmark_group("lbp_128x128_6_labels");
    g.sample_size(10);
    for (name, workers) in worker_counts() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_workers(workers, || b.iter(|| lbp_solve(black_box(&graph), &costs, &params).unwrap()))
        });
    }
    g.finish();
}

fn bench_dt(c: &mut Criterion) {
    let (w, h) = (1024u32, 1024u32);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mask: Vec<bool> = (0..w * h).map(|_| rng.random::<f64>() < 0.995).collect();
    let mut g = c.benchmark_group("distance_transform_1024");
    for (name, workers) in worker_counts() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_workers(workers, || b.iter(|| distance_transform(black_box(&mask), w, h)))
        });
    }
    g.finish();
}

fn bench_raster(c: &mut Criterion) {
    let mesh = synth::build_shape(Shape::Icosphere { subdiv: 5 });
    let cam = PinholeCamera::look_at(Vec3::new(0.0, -1.5, 3.5), Vec3::zeros(), Vec3::z(), 40.0, 1024, 1024);
    let mut g = c.benchmark_group("rasterize_icosphere5_1024");
    for (name, workers) in worker_counts() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            par::with_workers(workers, || b.iter(|| rasterize_depth(black_box(&mesh), &cam)))
        });
    }
    g.finish();
}

fn bench_pipeline(c: &mut Criterion) {
    let scene = synth::generate_scene(&SceneSpec {
        shape: Shape::Cube { subdiv: 4 },
        pattern: Pattern::Checkerboard { cells: 8 },
        width: 256,
        height: 256,
        supersample: 1,
        ..SceneSpec::default()
    })
    .unwrap();
    let mut g = c.benchmark_group("texture_cube_6_views_256");
    g.sample_size(10);
    for (name, workers) in worker_counts() {
        let config = PipelineConfig { workers, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| texture_views(black_box(&scene.mesh), &scene.views, &config).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_lbp, bench_dt, bench_raster, bench_pipeline);
criterion_main!(benches);
