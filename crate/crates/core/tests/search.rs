use nhhmm::asa::{
    run_parallel, run_thread, thread_rng, EmFit, EpochStart, HyperRanges, Interval, ParallelSettings, Schedule,
    SearchRecord,
};
use nhhmm::data::Dataset;
use nhhmm::emissions::Family;
use nhhmm::hmm::Criterion;
use nhhmm::model_space::{AdaptivePriors, AdaptiveState, ModelConfig, PsiRecord};
use nhhmm::par::Execution;
use nhhmm::simulate::{recovery_model, simulate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_schedule() -> Schedule {
    Schedule {
        tau_max: 20.0,
        tau_min: 0.5,
        kappa: 1.5,
        epochs: 3,
        adaptation_epochs: 2,
    }
}

fn small_priors(p: usize) -> AdaptivePriors {
    AdaptivePriors {
        a_lambda: 20.0,
        b_lambda: 2.0,
        a_mu: 4.0,
        b_mu: 1.0,
        a_c: 2.0,
        b_c: 2.0,
        zeta: [1.0, 1.0, 1.0, 1.0],
        cap: p.max(1),
        psi_exploration: 0.0,
        psi_record: PsiRecord::Touched,
    }
}

/// The recovery scenario on three covariates, or its intercept-only reduction.
fn small_data(p: usize, seed: u64) -> Dataset {
    let mut model = recovery_model(3).unwrap();
    if p == 0 {
        model.config = ModelConfig::empty(0);
        for s in &mut model.emission.states {
            s.coefficients.truncate(1);
        }
        for c in model.transition.coefficients.iter_mut().flatten() {
            c.truncate(1);
        }
    }
    simulate(&model, 120, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().data
}

fn search(data: &Dataset, seed: u64) -> SearchRecord<EmFit> {
    let p = data.n_covariates();
    let adaptive = AdaptiveState::new(small_priors(p), p).unwrap();
    run_thread(
        data,
        Family::Gaussian,
        2,
        &small_schedule(),
        adaptive,
        Criterion::Bic,
        EpochStart::Redraw,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap()
}

#[test]
fn singleton_space_only_refits() {
    let data = small_data(0, 1);
    let rec = search(&data, 2);
    assert_eq!(rec.best.config, ModelConfig::empty(0));
    assert_eq!(rec.visits.len(), 1);
    assert!(!rec.trace.is_empty());
    assert!(rec.trace.iter().all(|t| t.proposal == ModelConfig::empty(0) && t.neighbourhood == 0));
    assert!(rec.best.criterion.is_finite());
}

#[test]
fn fixed_seed_repeats_exactly() {
    let data = small_data(3, 3);
    let a = search(&data, 4);
    let b = search(&data, 4);
    assert_eq!(a.best, b.best);
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.visits, b.visits);
    assert_eq!(a.adaptive_by_epoch, b.adaptive_by_epoch);
    let c = search(&data, 5);
    assert_ne!(a.trace, c.trace);
}

#[test]
fn adaptation_stops_after_its_epochs() {
    let data = small_data(3, 6);
    let rec = search(&data, 7);
    let sched = small_schedule();
    assert_eq!(rec.adaptive_by_epoch.len(), sched.epochs);
    let frozen = &rec.adaptive_by_epoch[sched.adaptation_epochs - 1];
    for later in &rec.adaptive_by_epoch[sched.adaptation_epochs..] {
        assert_eq!(later, frozen);
    }
    assert!(!frozen.d_l.is_empty());
    assert_eq!(frozen.d_l.len(), rec.diagnostics.successes);
}

#[test]
fn best_is_the_trace_minimum() {
    let data = small_data(3, 8);
    let rec = search(&data, 9);
    for pair in rec.trace.windows(2) {
        assert!(pair[1].global_best <= pair[0].global_best);
    }
    let min_visit = rec.visits.values().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(rec.best.criterion, min_visit);
    assert_eq!(rec.visits[&rec.best.config], rec.best.criterion);
    let min_trace = rec.trace.iter().map(|t| t.criterion).fold(f64::INFINITY, f64::min);
    assert!(rec.best.criterion <= min_trace);
    assert_eq!(rec.trace.last().unwrap().global_best, rec.best.criterion);
}

fn quick_ranges() -> HyperRanges {
    HyperRanges {
        a_lambda: Interval::uniform(10.0, 20.0),
        b_lambda: Interval::fixed(2.0),
        a_mu: Interval::uniform(2.0, 4.0),
        b_mu: Interval::fixed(1.0),
        tau_min: Interval::fixed(0.5),
        tau_max: Interval::uniform(5.0, 20.0),
        kappa: Interval::fixed(1.5),
        epochs: 2,
        adaptation_epochs: 1,
        ..HyperRanges::default()
    }
}

fn settings(n_threads: usize, execution: Execution) -> ParallelSettings {
    ParallelSettings {
        family: Family::Gaussian,
        state_choices: vec![2],
        n_threads,
        ranges: quick_ranges(),
        criterion: Criterion::Bic,
        master_seed: 42,
        execution,
    }
}

#[test]
fn one_thread_is_run_thread() {
    let data = small_data(3, 10);
    let par = run_parallel(&data, &settings(1, Execution::Sequential)).unwrap();
    let mut rng = thread_rng(42, 0);
    let hyper = quick_ranges().draw(3, &[2], &mut rng).unwrap();
    let direct = run_thread(
        &data,
        Family::Gaussian,
        hyper.n_states,
        &hyper.schedule,
        AdaptiveState::new(hyper.priors.clone(), 3).unwrap(),
        Criterion::Bic,
        hyper.epoch_start,
        &mut rng,
    )
    .unwrap();
    let got = par.best().unwrap();
    assert_eq!(par.best_thread, Some(0));
    assert_eq!(got.best, direct.best);
    assert_eq!(got.trace, direct.trace);
}

#[test]
fn execution_mode_does_not_change_results() {
    let data = small_data(3, 11);
    let seq = run_parallel(&data, &settings(4, Execution::Sequential)).unwrap();
    let par = run_parallel(&data, &settings(4, Execution::Parallel)).unwrap();
    assert_eq!(seq.best_thread, par.best_thread);
    for (a, b) in seq.threads.iter().zip(&par.threads) {
        assert_eq!(a.hyper, b.hyper);
        let (ra, rb) = (a.result.as_ref().unwrap(), b.result.as_ref().unwrap());
        assert_eq!(ra.best, rb.best);
        assert_eq!(ra.trace, rb.trace);
    }
    let best = seq.best().unwrap().best.criterion;
    for t in &seq.threads {
        assert!(t.result.as_ref().unwrap().best.criterion >= best);
    }
}
