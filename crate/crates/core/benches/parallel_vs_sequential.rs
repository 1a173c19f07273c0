use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use snlp_core::generalized::{ExitSpec, Generalized, Grids};
use snlp_core::levy::LevyModel;
use snlp_core::parallel::Execution;
use snlp_core::potential::NamedPotential;
use snlp_core::simulate::{run_exit_mc, MCConfig};

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn exit_mc(c: &mut Criterion) {
    let model = LevyModel::brownian(0.0, 1.0).unwrap();
    let spec = ExitSpec::new(0.0, 0.5, 1.0).unwrap();
    let f = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
    let mut group = c.benchmark_group("exit_mc");
    group.sample_size(10);
    for (name, mode) in MODES {
        let cfg = MCConfig::new(1e-3, 2_000, 1).with_execution(mode);
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| run_exit_mc(&model, &f, |_| 1.0, |_, _| 1.0, &spec, black_box(cfg), false).unwrap())
        });
    }
    group.finish();
}

fn generalized_profile(c: &mut Criterion) {
    let model = LevyModel::exp_jump_diffusion(0.3, 0.5, 1.0, 0.25).unwrap();
    let spec = ExitSpec::new(0.0, 0.5, 1.0).unwrap();
    let f = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
    let grids = Grids::new(33, 256).unwrap();
    let mut group = c.benchmark_group("generalized_evaluate");
    group.sample_size(10);
    for (name, mode) in MODES {
        let engine = Generalized::new(&model, &f, 0.0, grids).unwrap().with_execution(mode);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| engine.evaluate(black_box(&spec), |_| 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, exit_mc, generalized_profile);
criterion_main!(benches);
