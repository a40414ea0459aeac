use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nhhmm::hmm::forward_backward;
use nhhmm::io::{load_csv, read_model, ColumnRoles, FitResult};
use nhhmm::model_space::ModelConfig;

fn nhhmm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nhhmm"))
        .args(args)
        .current_dir(dir)
        .env_remove("NHHMM_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const QUICK: &[&str] = &[
    "--a-lambda", "10:20", "--b-lambda", "2", "--a-mu", "2:4", "--b-mu", "1",
    "--tau-min", "0.5", "--tau-max", "5:20", "--kappa", "1.5", "--epochs", "2", "--adaptation-epochs", "1",
];

fn simulated(dir: &Path, covariates: &str, n: &str, seed: &str) {
    ok(&nhhmm(
        &[
            "simulate", "--scenario", "recovery", "--covariates", covariates, "--n", n, "--seed", seed,
            "--out", "data.csv", "--states-out", "truth_states.csv", "--model-out", "truth.json",
        ],
        dir,
    ));
}

#[test]
fn fixed_fit_is_at_least_as_likely_as_the_truth() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "4", "300", "1");
    ok(&nhhmm(
        &["fit", "--data", "data.csv", "--fixed", "1100:0010", "--restarts", "3", "--out", "out"],
        dir.path(),
    ));
    let res = FitResult::from_json(&fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    let truth = read_model(&fs::read_to_string(dir.path().join("truth.json")).unwrap()).unwrap();
    let data = load_csv(&dir.path().join("data.csv"), &ColumnRoles::default()).unwrap();
    let truth_ll = forward_backward(&truth, &data).unwrap().loglik;
    assert!(truth_ll <= res.loglik + 1e-6 * data.len() as f64, "{truth_ll} vs {}", res.loglik);
    assert_eq!(res.model.config, ModelConfig::from_bits("1100", "0010").unwrap());
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn thirty_thread_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "3", "150", "2");
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let mut args = vec!["fit", "--data", "data.csv", "--seed", "7", "--split-index", "130", "--out", out];
        args.extend_from_slice(QUICK);
        let o = Command::new(env!("CARGO_BIN_EXE_nhhmm"))
            .args(&args)
            .current_dir(dir.path())
            .env("NHHMM_THREADS", "30")
            .output()
            .unwrap();
        ok(&o);
        runs.push((o.stdout, outputs(&dir.path().join(out))));
    }
    assert_eq!(runs[0], runs[1]);
    let res = FitResult::from_json(&fs::read_to_string(dir.path().join("a/result.json")).unwrap()).unwrap();
    assert_eq!(res.threads.len(), 30);
    assert_eq!(res.run.threads, 30);
    assert!(runs[0].1.iter().any(|(name, _)| name == "predictions.csv"));
}

#[test]
fn intercept_only_data_gives_the_unique_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("y\n");
    for i in 0..60 {
        csv.push_str(&format!("{}\n", if (i / 10) % 2 == 0 { 0.1 * i as f64 } else { 8.0 + 0.05 * i as f64 }));
    }
    fs::write(dir.path().join("d.csv"), csv).unwrap();
    let mut args = vec!["fit", "--data", "d.csv", "--threads", "2", "--out", "out"];
    args.extend_from_slice(QUICK);
    ok(&nhhmm(&args, dir.path()));
    let res = FitResult::from_json(&fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    assert_eq!(res.model.config, ModelConfig::empty(0));
}

#[test]
fn config_file_wins_over_flags() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path(), "3", "80", "3");
    fs::write(dir.path().join("run.toml"), "seed = 11\nthreads = 2\n").unwrap();
    let mut args = vec!["fit", "--data", "data.csv", "--seed", "1", "--threads", "3", "--config", "run.toml", "--out", "out"];
    args.extend_from_slice(QUICK);
    ok(&nhhmm(&args, dir.path()));
    let res = FitResult::from_json(&fs::read_to_string(dir.path().join("out/result.json")).unwrap()).unwrap();
    assert_eq!(res.run.seed, 11);
    assert_eq!(res.threads.len(), 2);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(nhhmm(&["--help"], p).status.code(), Some(0));
    assert_eq!(nhhmm(&["fit", "--bogus"], p).status.code(), Some(1));
    assert_eq!(nhhmm(&["fit", "--data", "missing.csv"], p).status.code(), Some(1));

    let mut csv = String::from("y,x1\n");
    for i in 0..8 {
        csv.push_str(&format!("{i},{}\n", if i == 5 { "abc".to_string() } else { i.to_string() }));
    }
    fs::write(p.join("bad.csv"), csv).unwrap();
    let out = nhhmm(&["fit", "--data", "bad.csv"], p);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 7"));

    let ones = "error\n".to_string() + &"1\n".repeat(20);
    let zeros = "error\n".to_string() + &"0\n".repeat(20);
    fs::write(p.join("a.csv"), ones).unwrap();
    fs::write(p.join("b.csv"), zeros).unwrap();
    assert_eq!(nhhmm(&["dmtest", "--a", "a.csv", "--b", "b.csv"], p).status.code(), Some(2));
}

#[test]
fn decode_predict_backtest_dmtest_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    simulated(p, "3", "120", "4");
    let dec = nhhmm(&["decode", "--model", "truth.json", "--data", "data.csv", "--out", "states.csv"], p);
    ok(&dec);
    let states = fs::read_to_string(p.join("states.csv")).unwrap();
    assert_eq!(states.lines().count(), 121);

    ok(&nhhmm(&["predict", "--model", "truth.json", "--data", "data.csv", "--split-index", "100", "--out", "pred.csv"], p));
    let pred = fs::read_to_string(p.join("pred.csv")).unwrap();
    assert_eq!(pred.lines().count(), 21);

    let same = nhhmm(&["dmtest", "--a", "pred.csv", "--b", "pred.csv", "--pred-col", "yhat", "--actual-col", "y"], p);
    ok(&same);
    assert!(String::from_utf8_lossy(&same.stdout).contains("\n0,0.5,"));

    fs::write(p.join("trade.csv"), "state,price\n1,100\n0,110\n2,120\n0,90\n").unwrap();
    let bt = nhhmm(&["backtest", "--input", "trade.csv", "--roles", "wait,buy,sell"], p);
    ok(&bt);
    assert!(String::from_utf8_lossy(&bt.stderr).contains("final wealth 1200.000000"));
}
