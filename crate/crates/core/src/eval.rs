//! Out-of-sample evaluation: filtered one-step predictions, price
//! reconstruction, error statistics, forecast comparison and a simple
//! regime-driven trading simulation.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::Dataset;
use crate::emissions::Family;
use crate::error::{Error, Result};
use crate::hmm::{log_emissions, Nhhmm, Prepared, TransitionSeq};

/// Test-period predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSeries {
    pub yhat: Vec<f64>,
    pub phat: Vec<f64>,
    pub states: Vec<usize>,
}

/// One-step-ahead predictions over `test`, filtering through `train` first.
///
/// Each prediction uses the state distribution given all earlier responses;
/// the realised response is then absorbed. Prices compound as
/// `phat_i = phat_{i-1} * exp(yhat_i)` from `p0`.
/// States are the most probable path endpoints given the data so far.
pub fn predict(model: &Nhhmm, train: &Dataset, test: &Dataset, p0: f64) -> Result<PredictionSeries> {
    model.validate()?;
    if test.is_empty() {
        return Err(Error::input("empty test set"));
    }
    let all = Dataset::concat(train, test)?;
    let prep = Prepared::new(model.family, &model.config, &all)?;
    let logf = log_emissions(model, &prep)?;
    let trans = TransitionSeq::new(model, &prep.transition_design)?;
    let s = model.n_states();
    let n = all.len();
    let start = train.len();

    let mut alpha = vec![0.0; s];
    let mut prior = vec![0.0; s];
    let mut delta = vec![0.0; s];
    let mut next_delta = vec![0.0; s];
    let mut out = PredictionSeries {
        yhat: Vec::with_capacity(test.len()),
        phat: Vec::with_capacity(test.len()),
        states: Vec::with_capacity(test.len()),
    };
    let mut price = p0;
    for i in 0..n {
        if i == 0 {
            prior.copy_from_slice(&model.transition.initial_probs);
        } else {
            let a = trans.step(i - 1);
            for k in 0..s {
                prior[k] = (0..s).map(|j| alpha[j] * a[j * s + k]).sum();
            }
        }
        if i >= start {
            let x = prep.emission_design.row(i);
            let scale = match model.family {
                Family::Gaussian => 1.0,
                Family::Binomial => f64::from(all.trials_at(i).unwrap_or(1)),
            };
            let yhat: f64 = (0..s).map(|k| prior[k] * model.state_mean(k, x)).sum::<f64>() * scale;
            price *= yhat.exp();
            out.yhat.push(yhat);
            out.phat.push(price);
        }

        let row = &logf[i * s..(i + 1) * s];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::ImpossibleObservation(i));
        }
        let mut c = 0.0;
        for k in 0..s {
            alpha[k] = prior[k] * (row[k] - max).exp();
            c += alpha[k];
        }
        if !(c > 0.0) {
            return Err(Error::ImpossibleObservation(i));
        }
        for a in &mut alpha {
            *a /= c;
        }

        if i == 0 {
            for k in 0..s {
                delta[k] = model.transition.initial_probs[k].ln() + row[k];
            }
        } else {
            let a = trans.step(i - 1);
            for k in 0..s {
                let best = (0..s)
                    .map(|j| delta[j] + a[j * s + k].ln())
                    .fold(f64::NEG_INFINITY, f64::max);
                next_delta[k] = best + row[k];
            }
            std::mem::swap(&mut delta, &mut next_delta);
        }
        if i >= start {
            let mut arg = 0;
            for k in 1..s {
                if delta[k] > delta[arg] {
                    arg = k;
                }
            }
            out.states.push(arg);
        }
    }
    Ok(out)
}

fn check_pair(a: &[f64], b: &[f64], min: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(format!("series lengths differ: {} vs {}", a.len(), b.len())));
    }
    if a.len() < min {
        return Err(Error::input(format!("need at least {min} values, got {}", a.len())));
    }
    if let Some(i) = a.iter().chain(b).position(|v| !v.is_finite()) {
        return Err(Error::input(format!("non-finite value at position {}", i % a.len())));
    }
    Ok(())
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    check_pair(predicted, actual, 1)?;
    let ss: f64 = predicted.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    Ok((ss / predicted.len() as f64).sqrt())
}

/// Autoregression of the prediction residuals `e_t = rho e_{t-1} + eta_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coint {
    pub rho: f64,
    pub std_error: f64,
    /// `max(|rho + 1.96 se|, |rho - 1.96 se|)`.
    pub statistic: f64,
}

pub fn coint(predicted: &[f64], actual: &[f64]) -> Result<Coint> {
    check_pair(predicted, actual, 3)?;
    let e: Vec<f64> = predicted.iter().zip(actual).map(|(p, a)| p - a).collect();
    let sxx: f64 = e[..e.len() - 1].iter().map(|v| v * v).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate("prediction residuals have zero variance".into()));
    }
    let sxy: f64 = e.windows(2).map(|w| w[0] * w[1]).sum();
    let rho = sxy / sxx;
    let m = (e.len() - 1) as f64;
    let rss: f64 = e.windows(2).map(|w| (w[1] - rho * w[0]).powi(2)).sum();
    let std_error = (rss / (m - 1.0) / sxx).sqrt();
    let statistic = (rho + 1.96 * std_error).abs().max((rho - 1.96 * std_error).abs());
    Ok(Coint {
        rho,
        std_error,
        statistic,
    })
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Default Newey-West lag `floor(n^(1/3))`, computed exactly.
pub fn default_lag(n: usize) -> usize {
    let mut h = (n as f64).cbrt().floor() as usize;
    while (h + 1).pow(3) <= n {
        h += 1;
    }
    while h > 0 && h.pow(3) > n {
        h -= 1;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    /// One-sided p-value for "method a is more accurate".
    pub p_value: f64,
    pub lag: usize,
}

/// Diebold-Mariano test on squared-error loss differentials with the default lag.
pub fn dm_test(errors_a: &[f64], errors_b: &[f64]) -> Result<DmResult> {
    dm_test_with_lag(errors_a, errors_b, default_lag(errors_a.len()))
}

/// Diebold-Mariano test with a Bartlett-weighted long-run variance of lag `h`.
pub fn dm_test_with_lag(errors_a: &[f64], errors_b: &[f64], h: usize) -> Result<DmResult> {
    check_pair(errors_a, errors_b, 10)?;
    let n = errors_a.len();
    let d: Vec<f64> = errors_a.iter().zip(errors_b).map(|(a, b)| a * a - b * b).collect();
    if d.iter().all(|&v| v == 0.0) {
        return Ok(DmResult {
            statistic: 0.0,
            p_value: 0.5,
            lag: h,
        });
    }
    if d.iter().all(|&v| v == d[0]) {
        return Err(Error::Degenerate("loss differential is constant".into()));
    }
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let dev: Vec<f64> = d.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| dev[k..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / nf;
    let mut lrv = autocov(0);
    for k in 1..=h.min(n - 1) {
        lrv += 2.0 * (1.0 - k as f64 / (h as f64 + 1.0)) * autocov(k);
    }
    if !(lrv > 0.0) {
        return Err(Error::Degenerate("loss differential has zero long-run variance".into()));
    }
    let statistic = mean / (lrv / nf).sqrt();
    Ok(DmResult {
        statistic,
        p_value: standard_normal_cdf(statistic),
        lag: h,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Wait,
    Buy,
    Sell,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Wait => "wait",
            Role::Buy => "buy",
            Role::Sell => "sell",
        })
    }
}

/// Trading role of every state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRoleMap {
    pub roles: Vec<Role>,
    /// A tie in dispersion or intercept was broken by state index.
    pub tie_broken: bool,
}

/// Sell is the most volatile state; of the other two, buy has the lower mean
/// at zero covariates. Ties go to the lower state index.
pub fn assign_roles(model: &Nhhmm) -> Result<StateRoleMap> {
    if model.family != Family::Gaussian {
        return Err(Error::input("trading roles need a Gaussian model"));
    }
    if model.n_states() != 3 {
        return Err(Error::input(format!(
            "trading roles need exactly 3 states, the model has {}",
            model.n_states()
        )));
    }
    let st = &model.emission.states;
    let mut tie_broken = false;
    let mut sell = 0;
    for k in 1..3 {
        if st[k].dispersion > st[sell].dispersion {
            sell = k;
        }
    }
    tie_broken |= (0..3).any(|k| k != sell && st[k].dispersion == st[sell].dispersion);
    let rest: Vec<usize> = (0..3).filter(|&k| k != sell).collect();
    let (a, b) = (rest[0], rest[1]);
    let (ma, mb) = (st[a].coefficients[0], st[b].coefficients[0]);
    tie_broken |= ma == mb;
    let (buy, wait) = if mb < ma { (b, a) } else { (a, b) };
    let mut roles = vec![Role::Wait; 3];
    roles[sell] = Role::Sell;
    roles[buy] = Role::Buy;
    roles[wait] = Role::Wait;
    Ok(StateRoleMap { roles, tie_broken })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Action {
    Buy,
    Sell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub index: usize,
    pub action: Action,
    pub price: f64,
    pub shares: f64,
    pub cash: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Backtest {
    pub final_wealth: f64,
    /// Marked-to-market wealth at every close.
    pub wealth: Vec<f64>,
    pub trades: Vec<Trade>,
}

/// All-in on buy days, all-out on sell days, at the close, with fractional
/// shares and no costs.
pub fn backtest(states: &[usize], roles: &[Role], prices: &[f64], starting_cash: f64) -> Result<Backtest> {
    if states.len() != prices.len() {
        return Err(Error::input(format!(
            "{} states but {} prices",
            states.len(),
            prices.len()
        )));
    }
    if !(starting_cash > 0.0) {
        return Err(Error::input("starting cash must be positive"));
    }
    if let Some(i) = prices.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::input(format!("price at index {i} is not a positive number")));
    }
    let mut cash = starting_cash;
    let mut shares = 0.0;
    let mut trades = Vec::new();
    let mut wealth = Vec::with_capacity(prices.len());
    for (i, (&s, &price)) in states.iter().zip(prices).enumerate() {
        let role = *roles
            .get(s)
            .ok_or_else(|| Error::input(format!("state {s} at index {i} has no role")))?;
        match role {
            Role::Buy if cash > 0.0 => {
                shares += cash / price;
                cash = 0.0;
                trades.push(Trade {
                    index: i,
                    action: Action::Buy,
                    price,
                    shares,
                    cash,
                });
            }
            Role::Sell if shares > 0.0 => {
                cash += shares * price;
                shares = 0.0;
                trades.push(Trade {
                    index: i,
                    action: Action::Sell,
                    price,
                    shares,
                    cash,
                });
            }
            _ => {}
        }
        wealth.push(cash + shares * price);
    }
    let final_wealth = wealth.last().copied().unwrap_or(starting_cash);
    Ok(Backtest {
        final_wealth,
        wealth,
        trades,
    })
}

/// Observed success proportions; `None` where there were no trials.
pub fn naive_rates(y: &[f64], trials: &[u32]) -> Result<Vec<Option<f64>>> {
    if y.len() != trials.len() {
        return Err(Error::input("counts and trials differ in length"));
    }
    y.iter()
        .zip(trials)
        .enumerate()
        .map(|(i, (&y, &n))| {
            if !(y >= 0.0) || y.fract() != 0.0 {
                return Err(Error::input(format!("count at index {i} is not a non-negative integer")));
            }
            if y > f64::from(n) {
                return Err(Error::input(format!("count {y} exceeds trials {n} at index {i}")));
            }
            Ok((n > 0).then(|| y / f64::from(n)))
        })
        .collect()
}
