use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use harvest_core::analytic::{characteristic_roots, example1_value, Example1Params};
use harvest_core::model::{generator_apply, uniform_grid, GridFunction};
use harvest_core::qvi::qvi_check;

fn analytic(c: &mut Criterion) {
    let p = Example1Params::new([0.05, 0.12], [0.3, 0.2], [1.0, 1.0], 0.1).unwrap();
    c.bench_function("quartic roots", |b| b.iter(|| characteristic_roots(black_box(&p)).unwrap()));

    let (model, q) = (p.model(), p.generator());
    let grid = uniform_grid(0.1, 20.0, 2000);
    let phi = GridFunction::from_fn(grid, 2, |x, a| example1_value(&p, x, a).unwrap().finite().unwrap()).unwrap();
    c.bench_function("generator on 2000 points", |b| {
        b.iter(|| generator_apply(black_box(&phi), &model, &q, p.r).unwrap())
    });
    let f = harvest_core::model::YieldFunction::unit(2);
    c.bench_function("qvi check on 2000 points", |b| {
        b.iter(|| qvi_check(black_box(&phi), &model, &q, &f, p.r, Default::default()).unwrap())
    });
}

criterion_group!(benches, analytic);
criterion_main!(benches);
