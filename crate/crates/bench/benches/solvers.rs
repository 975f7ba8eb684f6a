use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use turnpike_bench::{fig1, fig2, rollout, ChainQp};
use turnpike_core::model::simulate;
use turnpike_core::nlp::qp_solve;
use turnpike_core::{solve_ocp, solve_tocp, OcpOptions};

fn integrate(c: &mut Criterion) {
    let r = rollout(3000);
    c.bench_function("rk4 rollout 3000 steps", |b| {
        b.iter(|| simulate(&r.model, black_box(&r.x0), &r.controls, &r.grid).unwrap())
    });
}

fn qp(c: &mut Criterion) {
    let fixture = ChainQp::new(400);
    let qp = fixture.problem();
    c.bench_function("box qp n=400", |b| b.iter(|| qp_solve(black_box(&qp)).unwrap()));
}

fn ocp(c: &mut Criterion) {
    let opts = OcpOptions::default();
    let mut group = c.benchmark_group("ocp");
    group.sample_size(10);
    let spec = fig1();
    group.bench_function("fig1 full", |b| b.iter(|| solve_ocp(black_box(&spec), &opts).unwrap()));
    let spec = fig2();
    group.bench_function("fig2 full", |b| b.iter(|| solve_ocp(black_box(&spec), &opts).unwrap()));
    group.bench_function("fig2 reduced", |b| {
        b.iter(|| {
            solve_tocp(&spec.model, &spec.cost, spec.x0.th, spec.x0.v_th, spec.horizon, spec.intervals, spec.x0.s, &opts.sqp)
                .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, integrate, qp, ocp);
criterion_main!(benches);
