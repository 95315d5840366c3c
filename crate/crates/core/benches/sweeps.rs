use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rdueq_core::equilibrium::{build_strategy, optimal_eta_search, SearchConfig};
use rdueq_core::hfun::PhiH;
use rdueq_core::model::MarketParams;
use rdueq_core::par::Execution;
use rdueq_core::timevar::{estimate_eta_star, solve_forward, SolverConfig, TimevarProblem};
use rdueq_core::verify::{default_t_grid, equilibrium_check, CheckConfig};
use rdueq_core::weighting::PhiFamily;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn example() -> TimevarProblem {
    let m = MarketParams::new(0.0, vec![0.05], vec![vec![0.2]], 10.0).unwrap();
    let h = Arc::new(PhiH::new(PhiFamily::sqrt_decay(1.5, 0.85 * 0.25, 10.0).unwrap()));
    TimevarProblem::new(m, h, -2.0).unwrap()
}

fn eps_ladder(c: &mut Criterion) {
    let p = example();
    let mut g = c.benchmark_group("eps_ladder");
    g.sample_size(10);
    for (name, execution) in MODES {
        let cfg = SolverConfig { execution, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| estimate_eta_star(black_box(&p), &cfg).unwrap()));
    }
    g.finish();
}

fn eta_sweep(c: &mut Criterion) {
    let p = example();
    let eta_star = estimate_eta_star(&p, &SolverConfig::default()).unwrap().eta_star;
    let mut g = c.benchmark_group("eta_sweep");
    g.sample_size(10);
    for (name, execution) in MODES {
        let cfg = SearchConfig { grid_points: 64, steps: 5_000, execution, ..Default::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| optimal_eta_search(black_box(&p), eta_star, &cfg).unwrap()));
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let p = example();
    let eta_star = estimate_eta_star(&p, &SolverConfig::default()).unwrap().eta_star;
    let y = solve_forward(&p, 0.5 * eta_star, 20_000).unwrap();
    let eq = build_strategy(p.problem(), &y).unwrap();
    let mut g = c.benchmark_group("equilibrium_check");
    g.sample_size(10);
    for (name, execution) in MODES {
        let cfg = CheckConfig {
            t_grid: Some(default_t_grid(10.0, 50)),
            exposure: Some(y.clone()),
            wealth: 1.0,
            execution,
            ..Default::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| equilibrium_check(black_box(p.problem()), &eq.strategy, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, eps_ladder, eta_sweep, oracle);
criterion_main!(benches);
