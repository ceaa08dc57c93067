//! Parallel-vs-sequential throughput of the batch map used by clearing-time
//! searches and sweeps, on two grain sizes: whole transient simulations
//! (hundreds of milliseconds each) and single network reductions
//! (microseconds each). Run with and without the `parallel` feature to see
//! the fallback cost; `map_ordered_seq` is the in-build baseline.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gridtide::admittance::kron_reduce;
use gridtide::ne39::new_england_39;
use gridtide::prelude::*;

fn simulation_batch(c: &mut Criterion) {
    let init = InitializedCase::from_case(new_england_39()).unwrap();
    let machines = Machines::from_init(&init);
    let state = initial_state(&init);
    let controller = Controller::disabled(&init.case);
    let opts = SimOptions::default();

    let scenarios: Vec<Scenario> = [3usize, 7, 15, 20, 24, 28]
        .iter()
        .map(|&bus| {
            let events = fault_at(bus, 0.1, 0.05).unwrap();
            compile_scenario(&init, &events, 1.5).unwrap()
        })
        .collect();
    let job = |sc: &Scenario| {
        let (ts, _) = simulate(&state, sc, &machines, &controller, &opts).unwrap();
        ts.max_angle_spread()
    };

    let mut group = c.benchmark_group("simulation_batch");
    group.sample_size(10);
    group.bench_function("map_ordered", |b| {
        b.iter(|| black_box(gridtide::par::map_ordered(black_box(&scenarios), job)))
    });
    group.bench_function("map_ordered_seq", |b| {
        b.iter(|| black_box(gridtide::par::map_ordered_seq(black_box(&scenarios), job)))
    });
    group.finish();
}

fn reduction_batch(c: &mut Criterion) {
    let case = new_england_39();
    let y = assemble_admittance(&case, None);
    // Every ten-bus window of the network, reduced to its boundary.
    let retained_sets: Vec<Vec<usize>> = (0..case.n_buses())
        .map(|start| (0..10).map(|k| (start + k) % case.n_buses()).collect())
        .map(|mut set: Vec<usize>| {
            set.sort_unstable();
            set
        })
        .collect();
    let job = |retained: &Vec<usize>| kron_reduce(&y.entries, retained).unwrap()[(0, 0)];

    let mut group = c.benchmark_group("reduction_batch");
    group.bench_function("map_ordered", |b| {
        b.iter(|| black_box(gridtide::par::map_ordered(black_box(&retained_sets), job)))
    });
    group.bench_function("map_ordered_seq", |b| {
        b.iter(|| black_box(gridtide::par::map_ordered_seq(black_box(&retained_sets), job)))
    });
    group.finish();
}

criterion_group!(benches, simulation_batch, reduction_batch);
criterion_main!(benches);
