use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nhhmm::asa::{run_parallel, EpochStart, Interval, ParallelSettings};
use nhhmm::data::Dataset;
use nhhmm::em::{fit_config, EmSettings};
use nhhmm::emissions::Family;
use nhhmm::error::{Error, Result};
use nhhmm::eval::{self, Role};
use nhhmm::hmm::{forward_backward, viterbi, Criterion, Nhhmm};
use nhhmm::io::{
    self as nio, BacktestReport, ColumnRoles, FitResult, PredictionReport, RunConfig, Split, ThreadSummary,
};
use nhhmm::model_space::{ModelConfig, PsiRecord};
use nhhmm::par::Execution;
use nhhmm::simulate::{recovery_model, simulate};

#[derive(Parser)]
#[command(name = "nhhmm", version, about = "Covariate selection for non-homogeneous hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search covariate configurations and fit the best model.
    Fit(FitArgs),
    /// Viterbi path and smoothed state probabilities for a saved model.
    Decode(DecodeArgs),
    /// One-step-ahead predictions over a test split.
    Predict(PredictArgs),
    /// Diebold-Mariano comparison of two prediction files.
    Dmtest(DmArgs),
    /// Trade on decoded states.
    Backtest(BacktestArgs),
    /// Generate synthetic data from a known model.
    Simulate(SimulateArgs),
}

#[derive(Args, Clone)]
struct RoleArgs {
    /// Response column.
    #[arg(long, default_value = "y")]
    response: String,
    /// Trial-count column (binomial models).
    #[arg(long)]
    trials: Option<String>,
    /// ISO-8601 date column.
    #[arg(long)]
    date: Option<String>,
    /// Price column used for price reconstruction and trading.
    #[arg(long)]
    price: Option<String>,
    /// Comma-separated covariate columns; defaults to all remaining columns.
    #[arg(long, value_delimiter = ',')]
    covariates: Option<Vec<String>>,
}

impl RoleArgs {
    fn roles(&self) -> ColumnRoles {
        ColumnRoles {
            response: self.response.clone(),
            trials: self.trials.clone(),
            date: self.date.clone(),
            price: self.price.clone(),
            covariates: self.covariates.clone(),
        }
    }
}

#[derive(Args, Clone)]
struct SplitArgs {
    /// First N rows are training data.
    #[arg(long, conflicts_with = "split_date")]
    split_index: Option<usize>,
    /// Rows dated before this day are training data.
    #[arg(long)]
    split_date: Option<String>,
}

impl SplitArgs {
    fn split(&self) -> Option<Split> {
        match (&self.split_index, &self.split_date) {
            (Some(i), _) => Some(Split::Index(*i)),
            (None, Some(d)) => Some(Split::Date(d.clone())),
            _ => None,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// TOML run configuration; its values override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "nhhmm-out")]
    out: PathBuf,
    #[arg(long, default_value = "gaussian")]
    family: Family,
    /// Candidate hidden-state counts, one drawn per thread.
    #[arg(long, value_delimiter = ',', default_value = "2")]
    states: Vec<usize>,
    #[arg(long, default_value = "BIC")]
    criterion: Criterion,
    /// Independent search threads.
    #[arg(long, env = "NHHMM_THREADS", default_value_t = 4)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    roles: RoleArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Skip the search and fit this configuration, written as GAMMA:DELTA bit strings.
    #[arg(long)]
    fixed: Option<String>,
    /// EM iterations per start for a fixed configuration.
    #[arg(long, default_value_t = 500)]
    em_iterations: usize,
    /// Extra random starts for a fixed configuration.
    #[arg(long, default_value_t = 9)]
    restarts: usize,
    /// Run the search threads one after another.
    #[arg(long)]
    sequential: bool,
    /// Starting cash for trading simulations.
    #[arg(long, default_value_t = 1000.0)]
    cash: f64,
    #[command(flatten)]
    hyper: HyperArgs,
}

/// Per-thread hyperparameters: a number or a `lo:hi` uniform range.
#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    a_lambda: Option<Interval>,
    #[arg(long)]
    b_lambda: Option<Interval>,
    #[arg(long)]
    a_mu: Option<Interval>,
    #[arg(long)]
    b_mu: Option<Interval>,
    #[arg(long)]
    a_c: Option<Interval>,
    #[arg(long)]
    b_c: Option<Interval>,
    /// Dirichlet weights of the four inclusion patterns.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    zeta: Option<Vec<f64>>,
    #[arg(long)]
    tau_min: Option<Interval>,
    #[arg(long)]
    tau_max: Option<Interval>,
    #[arg(long)]
    kappa: Option<Interval>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    adaptation_epochs: Option<usize>,
    /// Neighbourhood cap; defaults to the covariate count.
    #[arg(long)]
    cap: Option<usize>,
    #[arg(long)]
    psi_exploration: Option<f64>,
    /// `touched` or `full`.
    #[arg(long)]
    psi_record: Option<String>,
    /// `redraw` or `carry-over`.
    #[arg(long)]
    epoch_start: Option<String>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Model JSON or fit result.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    roles: RoleArgs,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    roles: RoleArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Starting price; defaults to the last training price, or 1.
    #[arg(long)]
    p0: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DmArgs {
    /// Predictions of the method claimed to be better.
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "phat")]
    pred_col: String,
    #[arg(long, default_value = "price")]
    actual_col: String,
    /// Newey-West lag; defaults to floor(n^(1/3)).
    #[arg(long)]
    lag: Option<usize>,
}

#[derive(Args)]
struct BacktestArgs {
    /// CSV with state and price columns.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "state")]
    state_col: String,
    #[arg(long, default_value = "price")]
    price_col: String,
    /// Model whose states get trading roles.
    #[arg(long, conflicts_with = "roles")]
    model: Option<PathBuf>,
    /// Explicit role per state, e.g. `wait,buy,sell`.
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<String>>,
    #[arg(long, default_value_t = 1000.0)]
    cash: f64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON to simulate from.
    #[arg(long, conflicts_with = "scenario")]
    model: Option<PathBuf>,
    /// Built-in scenario (`recovery`).
    #[arg(long)]
    scenario: Option<String>,
    /// Covariate count for the built-in scenario.
    #[arg(long, default_value_t = 8)]
    covariates: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Trials per row for binomial models.
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating hidden states.
    #[arg(long)]
    states_out: Option<PathBuf>,
    /// Also write the generating model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Dmtest(a) => cmd_dmtest(a),
        Command::Backtest(a) => cmd_backtest(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

fn buffer<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_file(p, bytes),
        None => {
            io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn run_config(a: &FitArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig {
        family: a.family,
        states: a.states.clone(),
        criterion: a.criterion,
        threads: a.threads,
        seed: a.seed,
        split: a.split.split(),
        roles: a.roles.roles(),
        starting_cash: a.cash,
        ..RunConfig::default()
    };
    let h = &a.hyper;
    let r = &mut cfg.hyper;
    let set = |slot: &mut Interval, v: Option<Interval>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    set(&mut r.a_lambda, h.a_lambda);
    set(&mut r.b_lambda, h.b_lambda);
    set(&mut r.a_mu, h.a_mu);
    set(&mut r.b_mu, h.b_mu);
    set(&mut r.a_c, h.a_c);
    set(&mut r.b_c, h.b_c);
    set(&mut r.tau_min, h.tau_min);
    set(&mut r.tau_max, h.tau_max);
    set(&mut r.kappa, h.kappa);
    if let Some(z) = &h.zeta {
        r.zeta = [z[0], z[1], z[2], z[3]];
    }
    if let Some(v) = h.epochs {
        r.epochs = v;
    }
    if let Some(v) = h.adaptation_epochs {
        r.adaptation_epochs = v;
    }
    if h.cap.is_some() {
        r.cap = h.cap;
    }
    if let Some(v) = h.psi_exploration {
        r.psi_exploration = v;
    }
    if let Some(v) = &h.psi_record {
        r.psi_record = match v.as_str() {
            "touched" => PsiRecord::Touched,
            "full" => PsiRecord::Full,
            _ => return Err(Error::config(format!("unknown psi record mode {v:?}"))),
        };
    }
    if let Some(v) = &h.epoch_start {
        r.epoch_start = match v.as_str() {
            "redraw" => EpochStart::Redraw,
            "carry-over" => EpochStart::CarryOver,
            _ => return Err(Error::config(format!("unknown epoch start {v:?}"))),
        };
    }
    if let Some(path) = &a.config {
        cfg = cfg.overridden_by(&read_text(path)?)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_fixed(s: &str, p: usize) -> Result<ModelConfig> {
    let (g, d) = s
        .split_once(':')
        .ok_or_else(|| Error::config("--fixed expects GAMMA:DELTA bit strings"))?;
    let expand = |bits: &str| if bits.is_empty() && p == 0 { String::new() } else { bits.to_string() };
    let cfg = ModelConfig::from_bits(&expand(g), &expand(d))?;
    if cfg.len() != p {
        return Err(Error::config(format!("--fixed covers {} covariates, the data has {p}", cfg.len())));
    }
    Ok(cfg)
}

fn load(path: &Path, roles: &ColumnRoles, family: Family) -> Result<Dataset> {
    if family == Family::Binomial && roles.trials.is_none() {
        return Err(Error::input("binomial models need --trials"));
    }
    nio::load_csv(path, roles)
}

fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = run_config(&a)?;
    let mut data = load(&a.data, &cfg.roles, cfg.family)?;
    cfg.apply_split(&mut data)?;
    let train = data.train();
    let n = train.len();

    let (model, best_thread, threads, parallel) = match &a.fixed {
        Some(spec) => {
            let config = parse_fixed(spec, train.n_covariates())?;
            if cfg.states.len() != 1 {
                return Err(Error::config("a fixed configuration needs a single state count"));
            }
            let settings = EmSettings {
                iterations: a.em_iterations,
                loglik_tolerance: 1e-10,
                restarts: a.restarts,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let res = fit_config(cfg.family, &config, &train, cfg.states[0], &settings, &mut rng)?;
            (res.model, None, Vec::new(), None)
        }
        None => {
            let settings = ParallelSettings {
                family: cfg.family,
                state_choices: cfg.states.clone(),
                n_threads: cfg.threads,
                ranges: cfg.hyper.clone(),
                criterion: cfg.criterion,
                master_seed: cfg.seed,
                execution: if a.sequential { Execution::Sequential } else { Execution::Parallel },
            };
            let res = run_parallel(&train, &settings)?;
            let threads = ThreadSummary::from_parallel(&res, n);
            let Some(best) = res.best() else {
                let reasons: Vec<String> = res.threads.iter().filter_map(|t| t.result.as_ref().err().cloned()).collect();
                return Err(Error::Degenerate(if reasons.is_empty() {
                    "no thread produced a finite criterion".into()
                } else {
                    reasons.join("; ")
                }));
            };
            let model = best
                .best
                .fit
                .as_ref()
                .map(|f| f.model.clone())
                .ok_or_else(|| Error::Degenerate("best solution has no fitted parameters".into()))?;
            (model, res.best_thread, threads, Some(res))
        }
    };

    let post = forward_backward(&model, &train)?;
    let path = viterbi(&model, &train)?;
    let k = model.free_parameters();
    let posteriors: Vec<Vec<f64>> = (0..n).map(|i| post.gamma_row(i).to_vec()).collect();

    let test = data.test();
    let mut prediction = None;
    if let Some(test) = &test {
        let p0 = train.prices.as_ref().and_then(|p| p.last().copied()).unwrap_or(1.0);
        let series = eval::predict(&model, &train, test, p0)?;
        let (pred, actual, what) = match &test.prices {
            Some(p) => (series.phat.clone(), p.clone(), "prices"),
            None => (series.yhat.clone(), test.response.clone(), "responses"),
        };
        let rmse = eval::rmse(&pred, &actual).ok();
        let coint = eval::coint(&pred, &actual);
        let note = match &coint {
            Err(e) => Some(format!("COINT unavailable: {e}")),
            Ok(_) if what == "responses" => Some("no price column; statistics compare responses".into()),
            Ok(_) => None,
        };
        prediction = Some(PredictionReport {
            series,
            rmse,
            coint: coint.ok(),
            note,
        });
    }

    let mut backtest = None;
    if model.family == Family::Gaussian && model.n_states() == 3 && train.prices.is_some() {
        let roles = eval::assign_roles(&model)?;
        let train_bt = eval::backtest(&path.states, &roles.roles, train.prices.as_deref().unwrap_or(&[]), cfg.starting_cash)?;
        let test_bt = match (&test, &prediction) {
            (Some(t), Some(p)) => match &t.prices {
                Some(prices) => Some(eval::backtest(&p.series.states, &roles.roles, prices, cfg.starting_cash)?),
                None => None,
            },
            _ => None,
        };
        backtest = Some(BacktestReport {
            roles,
            train: Some(train_bt),
            test: test_bt,
        });
    }

    let result = FitResult {
        run: cfg.clone(),
        n_train: n,
        best_thread,
        loglik: post.loglik,
        aic: Criterion::Aic.value(post.loglik, k, n),
        bic: Criterion::Bic.value(post.loglik, k, n),
        model,
        states: path.states.clone(),
        posteriors,
        threads,
        prediction,
        backtest,
    };

    fs::create_dir_all(&a.out).map_err(|e| Error::input(format!("{}: {e}", a.out.display())))?;
    write_file(&a.out.join("result.json"), result.to_json()?.as_bytes())?;
    write_file(&a.out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let summary = nio::summary_text(&result, &train.covariate_names);
    write_file(&a.out.join("summary.txt"), summary.as_bytes())?;
    write_file(
        &a.out.join("states.csv"),
        &buffer(|b| nio::write_states_csv(&path.states, &post, train.dates.as_deref(), b))?,
    )?;
    write_file(&a.out.join("threads.csv"), &buffer(|b| nio::write_threads_csv(&result.threads, b))?)?;
    if let Some(res) = &parallel {
        write_file(&a.out.join("trace.csv"), &buffer(|b| nio::write_trace_csv(res, b))?)?;
    }
    if let (Some(t), Some(p)) = (&test, &result.prediction) {
        write_file(&a.out.join("predictions.csv"), &buffer(|b| nio::write_predictions_csv(t, &p.series, b))?)?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Result<()> {
    let model = nio::read_model(&read_text(&a.model)?)?;
    let data = load(&a.data, &a.roles.roles(), model.family)?;
    let post = forward_backward(&model, &data)?;
    let path = viterbi(&model, &data)?;
    let bytes = buffer(|b| nio::write_states_csv(&path.states, &post, data.dates.as_deref(), b))?;
    emit(a.out.as_deref(), &bytes)?;
    eprintln!("log-likelihood {:.6}, Viterbi log-probability {:.6}", post.loglik, path.log_prob);
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = nio::read_model(&read_text(&a.model)?)?;
    let mut data = load(&a.data, &a.roles.roles(), model.family)?;
    match a.split.split() {
        Some(Split::Index(i)) => data.split_at_index(i)?,
        Some(Split::Date(d)) => data.split_at_date(&d)?,
        None => return Err(Error::input("predict needs --split-index or --split-date")),
    }
    let train = data.train();
    let test = data.test().ok_or_else(|| Error::input("the split leaves no test rows"))?;
    let p0 = a
        .p0
        .or_else(|| train.prices.as_ref().and_then(|p| p.last().copied()))
        .unwrap_or(1.0);
    let series = eval::predict(&model, &train, &test, p0)?;
    let bytes = buffer(|b| nio::write_predictions_csv(&test, &series, b))?;
    emit(a.out.as_deref(), &bytes)?;
    let (pred, actual) = match &test.prices {
        Some(p) => (&series.phat, p),
        None => (&series.yhat, &test.response),
    };
    eprintln!("RMSE {:.6}", eval::rmse(pred, actual)?);
    match eval::coint(pred, actual) {
        Ok(c) => eprintln!("COINT {:.6} (rho {:.6}, se {:.6})", c.statistic, c.rho, c.std_error),
        Err(e) => eprintln!("COINT unavailable: {e}"),
    }
    Ok(())
}

fn prediction_errors(path: &Path, pred: &str, actual: &str) -> Result<Vec<f64>> {
    let text = read_text(path)?;
    if let Ok(cols) = nio::read_columns(text.as_bytes(), &["error"]) {
        return Ok(cols["error"].clone());
    }
    let cols = nio::read_columns(text.as_bytes(), &[pred, actual])
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    Ok(cols[pred].iter().zip(&cols[actual]).map(|(p, y)| p - y).collect())
}

fn cmd_dmtest(a: DmArgs) -> Result<()> {
    let ea = prediction_errors(&a.a, &a.pred_col, &a.actual_col)?;
    let eb = prediction_errors(&a.b, &a.pred_col, &a.actual_col)?;
    let r = match a.lag {
        Some(h) => eval::dm_test_with_lag(&ea, &eb, h)?,
        None => eval::dm_test(&ea, &eb)?,
    };
    println!("statistic,p_value,lag,n");
    println!("{},{},{},{}", r.statistic, r.p_value, r.lag, ea.len());
    Ok(())
}

fn cmd_backtest(a: BacktestArgs) -> Result<()> {
    let text = read_text(&a.input)?;
    let cols = nio::read_columns(text.as_bytes(), &[&a.state_col, &a.price_col])?;
    let states = cols[&a.state_col]
        .iter()
        .map(|&s| {
            if s >= 0.0 && s.fract() == 0.0 {
                Ok(s as usize)
            } else {
                Err(Error::input(format!("state {s} is not a non-negative integer")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let roles: Vec<Role> = match (&a.model, &a.roles) {
        (Some(m), _) => eval::assign_roles(&nio::read_model(&read_text(m)?)?)?.roles,
        (None, Some(r)) => r
            .iter()
            .map(|s| match s.trim() {
                "wait" => Ok(Role::Wait),
                "buy" => Ok(Role::Buy),
                "sell" => Ok(Role::Sell),
                other => Err(Error::input(format!("unknown role {other:?}"))),
            })
            .collect::<Result<_>>()?,
        (None, None) => return Err(Error::input("backtest needs --model or --roles")),
    };
    let bt = eval::backtest(&states, &roles, &cols[&a.price_col], a.cash)?;
    println!("index,action,price,shares,cash");
    for t in &bt.trades {
        println!(
            "{},{},{},{},{}",
            t.index,
            match t.action {
                eval::Action::Buy => "buy",
                eval::Action::Sell => "sell",
            },
            t.price,
            t.shares,
            t.cash
        );
    }
    eprintln!("final wealth {:.6}", bt.final_wealth);
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let model: Nhhmm = match (&a.model, a.scenario.as_deref()) {
        (Some(p), _) => nio::read_model(&read_text(p)?)?,
        (None, Some("recovery")) => recovery_model(a.covariates)?,
        (None, Some(other)) => return Err(Error::input(format!("unknown scenario {other:?}"))),
        (None, None) => return Err(Error::input("simulate needs --model or --scenario")),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let sim = simulate(&model, a.n, a.trials, &mut rng)?;
    write_file(&a.out, &buffer(|b| nio::write_csv(&sim.data, b))?)?;
    if let Some(p) = &a.states_out {
        let mut text = String::from("state\n");
        for s in &sim.states {
            text.push_str(&format!("{s}\n"));
        }
        write_file(p, text.as_bytes())?;
    }
    if let Some(p) = &a.model_out {
        write_file(p, serde_json::to_string_pretty(&model)?.as_bytes())?;
    }
    Ok(())
}
