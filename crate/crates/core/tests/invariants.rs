mod common;

use nhhmm::data::Dataset;
use nhhmm::emissions::Family;
use nhhmm::eval::{backtest, dm_test, naive_rates, predict, rmse, Role};
use nhhmm::hmm::{forward_backward, Criterion, Nhhmm};
use nhhmm::io::{load_csv, read_model, roles_for, write_csv, FitResult, RunConfig};
use nhhmm::model_space::ModelConfig;
use nhhmm::transitions::transition_matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, binomial: bool, s: usize, n: usize, p: usize) -> (Nhhmm, Dataset) {
    let family = if binomial { Family::Binomial } else { Family::Gaussian };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = common::random_config(p, &mut rng);
    let model = common::random_model(family, s, &config, 1.0, &mut rng);
    let data = common::random_data(family, n, p, &mut rng);
    (model, data)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posteriors_are_distributions(seed in any::<u64>(), binomial in any::<bool>(), s in 1usize..4, n in 1usize..40, p in 0usize..4) {
        let (model, data) = instance(seed, binomial, s, n, p);
        let post = forward_backward(&model, &data).unwrap();
        prop_assert!(post.loglik.is_finite());
        for i in 0..n {
            let row = post.gamma_row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            prop_assert!(row.iter().all(|g| (0.0..=1.0 + 1e-12).contains(g)));
        }
        for slab in post.xi.chunks(s * s) {
            prop_assert!((slab.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn relabelling_states_keeps_likelihood(seed in any::<u64>(), binomial in any::<bool>(), n in 1usize..30, p in 0usize..3) {
        let (model, data) = instance(seed, binomial, 3, n, p);
        let base = forward_backward(&model, &data).unwrap().loglik;
        for perm in [[1, 2, 0], [2, 1, 0], [0, 2, 1]] {
            let ll = forward_backward(&model.permute_states(&perm), &data).unwrap().loglik;
            prop_assert!((ll - base).abs() <= 1e-9 * base.abs().max(1.0), "{} vs {}", ll, base);
        }
    }

    #[test]
    fn transition_rows_sum_to_one(seed in any::<u64>(), s in 1usize..5, x in proptest::collection::vec(-5.0f64..5.0, 0..4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut config = ModelConfig::empty(x.len());
        config.delta.iter_mut().for_each(|d| *d = true);
        let model = common::random_model(Family::Gaussian, s, &config, 3.0, &mut rng);
        for row in transition_matrix(&model.transition, &x).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn config_index_round_trip(p in 0usize..8, raw in any::<u64>()) {
        let idx = (raw as usize) % 4usize.pow(p as u32);
        let c = ModelConfig::from_index(idx, p);
        prop_assert_eq!(c.index(), idx);
        let again = ModelConfig::from_bits(&c.gamma_bits(), &c.delta_bits()).unwrap();
        prop_assert_eq!(again, c);
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>(), binomial in any::<bool>(), n in 1usize..20, p in 0usize..4) {
        let (_, mut data) = instance(seed, binomial, 2, n, p);
        data.prices = Some((0..n).map(|i| 10.0 + i as f64 * 0.37).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, std::fs::File::create(&path).unwrap()).unwrap();
        let back = load_csv(&path, &roles_for(&data)).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn model_json_round_trip(seed in any::<u64>(), binomial in any::<bool>(), s in 1usize..4, n in 1usize..10) {
        let (model, data) = instance(seed, binomial, s, n, 2);
        let post = forward_backward(&model, &data).unwrap();
        let res = FitResult {
            run: RunConfig::default(),
            n_train: n,
            best_thread: Some(0),
            model: model.clone(),
            loglik: post.loglik,
            aic: Criterion::Aic.value(post.loglik, model.free_parameters(), n),
            bic: Criterion::Bic.value(post.loglik, model.free_parameters(), n),
            states: vec![0; n],
            posteriors: (0..n).map(|i| post.gamma_row(i).to_vec()).collect(),
            threads: Vec::new(),
            prediction: None,
            backtest: None,
        };
        let text = res.to_json().unwrap();
        prop_assert_eq!(FitResult::from_json(&text).unwrap(), res);
        prop_assert_eq!(read_model(&text).unwrap(), model.clone());
        prop_assert_eq!(read_model(&serde_json::to_string(&model).unwrap()).unwrap(), model);
    }

    #[test]
    fn dm_is_antisymmetric(a in proptest::collection::vec(-3.0f64..3.0, 10..80), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|v| v + rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        if let (Ok(ab), Ok(ba)) = (dm_test(&a, &b), dm_test(&b, &a)) {
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-12);
            prop_assert!((ab.p_value + ba.p_value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn prices_telescope(seed in any::<u64>(), s in 1usize..4, n_train in 1usize..10, n_test in 1usize..10) {
        let (model, data) = instance(seed, false, s, n_train + n_test, 2);
        let mut d = data.clone();
        d.split_at_index(n_train).unwrap();
        let pred = predict(&model, &d.train(), &d.test().unwrap(), 50.0).unwrap();
        let total: f64 = pred.yhat.iter().sum();
        let last = *pred.phat.last().unwrap();
        prop_assert!((last.ln() - (50f64.ln() + total)).abs() < 1e-9 * (1.0 + total.abs()));
        prop_assert_eq!(pred.states.len(), n_test);
    }

    #[test]
    fn rmse_is_non_negative(a in proptest::collection::vec(-1e3f64..1e3, 1..50), shift in -5.0f64..5.0) {
        let b: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let r = rmse(&a, &b).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert!((r - shift.abs()).abs() < 1e-9);
    }

    #[test]
    fn waiting_days_change_nothing(states in proptest::collection::vec(0usize..3, 1..40), extra in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let roles = [Role::Wait, Role::Buy, Role::Sell];
        let prices: Vec<f64> = (0..states.len() + extra).map(|_| rand::Rng::random_range(&mut rng, 50.0..150.0)).collect();
        let base = backtest(&states, &roles, &prices[..states.len()], 1000.0).unwrap();
        let mut longer = states.clone();
        longer.extend(std::iter::repeat_n(0, extra));
        let ext = backtest(&longer, &roles, &prices, 1000.0).unwrap();
        prop_assert_eq!(&ext.trades, &base.trades);
        prop_assert_eq!(&ext.wealth[..states.len()], &base.wealth[..]);
        if base.trades.last().is_none_or(|t| t.shares == 0.0) {
            prop_assert_eq!(ext.final_wealth, base.final_wealth);
        }
    }

    #[test]
    fn naive_rates_divide(pairs in proptest::collection::vec((0u32..20, 0u32..20), 1..30)) {
        let trials: Vec<u32> = pairs.iter().map(|&(a, b)| a.max(b)).collect();
        let y: Vec<f64> = pairs.iter().map(|&(a, b)| f64::from(a.min(b))).collect();
        let rates = naive_rates(&y, &trials).unwrap();
        for ((r, &yi), &ni) in rates.iter().zip(&y).zip(&trials) {
            match r {
                None => prop_assert_eq!(ni, 0),
                Some(v) => prop_assert_eq!(*v, yi / f64::from(ni)),
            }
        }
    }
}
