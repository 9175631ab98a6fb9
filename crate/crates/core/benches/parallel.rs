//! Parallel vs sequential throughput on the data-parallel hot loops:
//! certificate tables, transition-tensor construction, value iteration, and
//! Monte Carlo episodes. The dispatching path uses the rayon pool when the
//! `parallel` feature is on; the `seq` baselines force the sequential sweep
//! either way, so the comparison shows the actual speedup of the build
//! configuration.

use criterion::{criterion_group, criterion_main, Criterion};
use subsim_core::cert::{model_uncertainty_delta, RelationKind, SsrCertificate};
use subsim_core::grid::{build_grid, transition_tensor};
use subsim_core::logic::{to_dfa, LabeledRegions, PropRegion, PropRole, ScltlFormula};
use subsim_core::network::Network;
use subsim_core::par;
use subsim_core::sim::{monte_carlo_estimate, CoupledRun};
use subsim_core::synth::{synthesize, Termination};
use subsim_core::system::{simple_subsystem, Subsystem, SupSearch};
use subsim_core::AxisBox;

fn bench_system() -> Subsystem {
    simple_subsystem(
        "bench",
        vec![
            "0.9*x[0] + 0.6*sin(0.1*x[1]) + 1.7*theta[0]*u[0]",
            "0.9*x[1] + 1.7*u[1]",
        ],
        AxisBox::new(vec![[-6.0, 6.0], [-6.0, 6.0]]),
        AxisBox::new(vec![[-1.0, 1.0], [-1.0, 1.0]]),
        AxisBox::new(vec![[0.95, 1.05]]),
        vec![1.0],
    )
    .unwrap()
}

fn certificate_table(c: &mut Criterion) {
    let s = bench_system();
    let candidates = s.theta_candidates(SupSearch::default()).unwrap();
    let grid = build_grid(&s, &[21, 21], &[3, 3], None, &[]).unwrap();
    let n_cells = grid.geometry.n_cells();
    let n_ext = grid.ext_inputs.len();
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..n_cells * n_ext)
        .map(|i| {
            (
                grid.geometry.representative(i / n_ext),
                grid.ext_inputs[i % n_ext].clone(),
            )
        })
        .collect();
    let mut g = c.benchmark_group("certificate_table");
    g.bench_function("dispatch", |b| {
        b.iter(|| {
            par::map_indexed(points.len(), |i| {
                model_uncertainty_delta(&s, &points[i].0, &points[i].1, &candidates).unwrap()
            })
        })
    });
    g.bench_function("seq", |b| {
        b.iter(|| {
            par::map_indexed_seq(points.len(), |i| {
                model_uncertainty_delta(&s, &points[i].0, &points[i].1, &candidates).unwrap()
            })
        })
    });
    g.finish();
}

fn tensor_build(c: &mut Criterion) {
    let s = bench_system();
    let mut g = c.benchmark_group("transition_tensor");
    g.sample_size(10);
    g.bench_function("dispatch", |b| {
        b.iter(|| {
            let mut grid = build_grid(&s, &[41, 41], &[3, 3], None, &[]).unwrap();
            transition_tensor(&mut grid, &s).unwrap();
            grid
        })
    });
    g.finish();
}

fn value_iteration(c: &mut Criterion) {
    let s = bench_system();
    let mut grid = build_grid(&s, &[41, 41], &[3, 3], None, &[]).unwrap();
    transition_tensor(&mut grid, &s).unwrap();
    let dfa = to_dfa(
        &ScltlFormula::parse("F goal").unwrap(),
        &["goal".to_string()],
    )
    .unwrap();
    let regions = LabeledRegions::new(
        vec!["goal".to_string()],
        vec![PropRegion {
            role: PropRole::Goal,
            boxes: vec![AxisBox::new(vec![[3.0, 5.0], [-1.0, 1.0]])],
        }],
        &s.output_box,
    )
    .unwrap();
    let cert = SsrCertificate::constant("c", RelationKind::GridRelation, 0.1, 0.01).unwrap();
    let mut g = c.benchmark_group("value_iteration");
    g.sample_size(10);
    g.bench_function("horizon10", |b| {
        b.iter(|| {
            synthesize(
                &grid,
                &s,
                &dfa,
                &regions,
                &cert,
                None,
                Termination::Horizon(10),
            )
            .unwrap()
        })
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let s = bench_system();
    let mut grid = build_grid(&s, &[21, 21], &[3, 3], None, &[]).unwrap();
    transition_tensor(&mut grid, &s).unwrap();
    let dfa = to_dfa(
        &ScltlFormula::parse("F goal").unwrap(),
        &["goal".to_string()],
    )
    .unwrap();
    let regions = LabeledRegions::new(
        vec!["goal".to_string()],
        vec![PropRegion {
            role: PropRole::Goal,
            boxes: vec![AxisBox::new(vec![[3.0, 5.0], [-1.0, 1.0]])],
        }],
        &s.output_box,
    )
    .unwrap();
    let cert = SsrCertificate::constant("c", RelationKind::GridRelation, 0.1, 0.01).unwrap();
    let result = synthesize(
        &grid,
        &s,
        &dfa,
        &regions,
        &cert,
        None,
        Termination::Horizon(10),
    )
    .unwrap();
    let network = Network::new(vec![s], vec![]);
    let controllers = vec![result.controller];
    let thetas = vec![vec![1.0]];
    let run = CoupledRun::new(&network, &controllers, &thetas).unwrap();
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    g.bench_function("episodes2k", |b| {
        b.iter(|| monte_carlo_estimate(&run, &[vec![-2.0, 0.0]], 2000, 15, 42).unwrap())
    });
    g.finish();
}

criterion_group!(
    benches,
    certificate_table,
    tensor_build,
    value_iteration,
    monte_carlo
);
criterion_main!(benches);
