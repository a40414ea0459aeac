use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion as Bench};
use nhhmm::asa::{run_parallel, HyperRanges, Interval, ParallelSettings};
use nhhmm::em::{fit_config, EmSettings};
use nhhmm::emissions::Family;
use nhhmm::hmm::Criterion;
use nhhmm::model_space::ModelConfig;
use nhhmm::par::Execution;
use nhhmm::simulate::{recovery_model, simulate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn search(c: &mut Bench) {
    let data = simulate(&recovery_model(6).unwrap(), 300, None, &mut ChaCha8Rng::seed_from_u64(1))
        .unwrap()
        .data;
    let ranges = HyperRanges {
        a_lambda: Interval::fixed(20.0),
        b_lambda: Interval::fixed(2.0),
        a_mu: Interval::fixed(4.0),
        b_mu: Interval::fixed(1.0),
        tau_min: Interval::fixed(0.5),
        tau_max: Interval::fixed(50.0),
        kappa: Interval::fixed(1.5),
        epochs: 2,
        adaptation_epochs: 1,
        ..HyperRanges::default()
    };
    let mut group = c.benchmark_group("search");
    group.sample_size(10);
    for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let settings = ParallelSettings {
            family: Family::Gaussian,
            state_choices: vec![2],
            n_threads: 8,
            ranges: ranges.clone(),
            criterion: Criterion::Bic,
            master_seed: 3,
            execution,
        };
        group.bench_function(BenchmarkId::new(name, 8), |b| b.iter(|| run_parallel(&data, &settings).unwrap()));
    }
    group.finish();
}

fn sweep(c: &mut Bench) {
    let data = simulate(&recovery_model(3).unwrap(), 300, None, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap()
        .data;
    let settings = EmSettings::with_iterations(30);
    let mut group = c.benchmark_group("config_sweep");
    group.sample_size(10);
    for (name, execution) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(BenchmarkId::new(name, 64), |b| {
            b.iter(|| {
                execution.map(64, |idx| {
                    let config = ModelConfig::from_index(idx, 3);
                    let mut rng = ChaCha8Rng::seed_from_u64(idx as u64);
                    fit_config(Family::Gaussian, &config, &data, 2, &settings, &mut rng)
                        .unwrap()
                        .loglik
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, search, sweep);
criterion_main!(benches);
