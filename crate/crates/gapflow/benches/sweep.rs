//! Hot loops of the sweep, torus and decoupling stages.
//!
//! Run once per build and compare the two result sets:
//!
//! ```text
//! cargo bench -p gapflow --bench sweep
//! cargo bench -p gapflow --bench sweep --no-default-features
//! ```
//!
//! Benchmark ids carry `parallel` or `sequential` so both builds land in
//! separate criterion histories under `target/criterion`.

use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gapflow::decay::{gapped_ensemble, resolvent_hs_diff};
use gapflow::gap::{locate_gap, scan_gaps, truncation, Approximant, GapPolicy, GapSpec};
use gapflow::grid::Resolution;
use gapflow::ids::{torus_count_below, TorusMethod};
use gapflow::par;
use gapflow::potential::{DislocationFamily, Preset};

fn mode() -> String {
    if par::is_parallel() {
        format!("parallel-{}", par::threads())
    } else {
        "sequential".to_string()
    }
}

fn res() -> Resolution {
    Resolution::new(1.0 / 16.0, 8).unwrap()
}

fn chain(c: &mut Criterion) {
    let family = DislocationFamily::preset(Preset::Mathieu { q: 2.0, phase: 0.0 });
    let mut policy = GapPolicy::new(res());
    policy.e_max = 30.0;
    let g = locate_gap(&family, &policy).unwrap().remove(0);
    let spec = GapSpec::from_gap(g.a, g.b, None, None).unwrap();
    let ap = Approximant::new(&family, &spec, 10.0, res(), 64).unwrap();
    let ts: Vec<f64> = (0..8).map(|k| 0.125 * k as f64).collect();
    let mut group = c.benchmark_group("counting_chain");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("n10_t8", mode()), |b| b.iter(|| ap.chain(&ts).unwrap()));
    group.finish();
}

fn gap_scan(c: &mut Criterion) {
    let op = truncation(&Preset::Mathieu { q: 2.0, phase: 0.0 }, 10.0, res()).unwrap();
    let mut group = c.benchmark_group("gap_scan");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("mathieu_n10", mode()), |b| {
        b.iter(|| scan_gaps(&op, -10.0, 30.0, 0.25, 0.5).unwrap())
    });
    group.finish();
}

fn torus(c: &mut Criterion) {
    let res = Resolution::new(0.125, 4).unwrap();
    let fam = DislocationFamily::new(
        Arc::new(Preset::Lattice { a: 3.0, b: 0.6, px: 0.0, py: 0.0 }),
        Arc::new(Preset::Lattice { a: 3.0, b: 0.6, px: 0.5, py: 0.25 }),
    );
    let mut group = c.benchmark_group("torus_count");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("lattice_n2_direct", mode()), |b| {
        b.iter(|| torus_count_below(2.0, 0.25, &fam, 20.0, res, TorusMethod::Direct).unwrap())
    });
    group.finish();
}

fn hs(c: &mut Criterion) {
    let ens = gapped_ensemble(7, 4, res()).unwrap();
    let ops: Vec<_> = ens.members.iter().map(|p| truncation(p, 4.0, res()).unwrap()).collect();
    let mut group = c.benchmark_group("resolvent_hs");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("ensemble4", mode()), |b| {
        b.iter(|| par::map(&ops, |op| resolvent_hs_diff(op, 0.0, 1.0).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, chain, gap_scan, torus, hs);
criterion_main!(benches);
