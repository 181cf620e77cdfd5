use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use timpath_bench::rectangle_case;
use timpath_core::flow::{compress, FlowSettings};
use timpath_core::raster::{rasterize_coarse, rasterize_fine, RasterSettings};
use timpath_core::{EvalSettings, Evaluator, ObjectiveConfig};

fn raster(c: &mut Criterion) {
    let (product, path) = rectangle_case();
    let s = RasterSettings::default();
    c.bench_function("rasterize_coarse", |b| {
        b.iter(|| rasterize_coarse(black_box(&path), 50, 50, product.cell_size, &s))
    });
    c.bench_function("rasterize_fine", |b| b.iter(|| rasterize_fine(black_box(&path), 50, 50, &s)));
}

fn flow(c: &mut Criterion) {
    let (product, path) = rectangle_case();
    let initial = rasterize_coarse(&path, 50, 50, product.cell_size, &RasterSettings::default());
    let mut group = c.benchmark_group("compress");
    group.sample_size(20);
    for (name, settle) in [("settled", 1.0), ("pure", 0.0)] {
        let settings = FlowSettings {
            settle_threshold: settle,
            ..FlowSettings::default()
        };
        group.bench_function(name, |b| {
            b.iter(|| compress(black_box(&initial), &product.gap, product.gap.g_final, &settings).unwrap())
        });
    }
    group.finish();
}

fn evaluate(c: &mut Criterion) {
    let (product, path) = rectangle_case();
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(20);
    for (name, tolerance_mode) in [("nominal", false), ("tolerance", true)] {
        let settings = EvalSettings {
            tolerance_mode,
            ..EvalSettings::default()
        };
        let evaluator = Evaluator::new(&product, &ObjectiveConfig::default(), settings).unwrap();
        group.bench_function(name, |b| b.iter(|| evaluator.evaluate(black_box(&path)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, raster, flow, evaluate);
criterion_main!(benches);
