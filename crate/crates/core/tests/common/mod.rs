#![allow(dead_code)]

use nhhmm::data::Dataset;
use nhhmm::emissions::{EmissionParams, Family, StateEmission};
use nhhmm::hmm::Nhhmm;
use nhhmm::model_space::ModelConfig;
use nhhmm::transitions::TransitionParams;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

pub fn random_config<R: Rng>(p: usize, rng: &mut R) -> ModelConfig {
    let mut c = ModelConfig::empty(p);
    for j in 0..p {
        c.gamma[j] = rng.random_bool(0.5);
        c.delta[j] = rng.random_bool(0.5);
    }
    c
}

/// Random parameters for `config`; transition logits and emission
/// coefficients are N(0, scale^2).
pub fn random_model<R: Rng>(family: Family, s: usize, config: &ModelConfig, scale: f64, rng: &mut R) -> Nhhmm {
    let noise = Normal::new(0.0, scale).unwrap();
    let ng = 1 + config.n_gamma();
    let nd = 1 + config.n_delta();
    let states = (0..s)
        .map(|_| StateEmission {
            coefficients: (0..ng).map(|_| noise.sample(rng)).collect(),
            dispersion: match family {
                Family::Gaussian => rng.random_range(0.5..2.0),
                Family::Binomial => 1.0,
            },
        })
        .collect();
    let mut transition = TransitionParams::zeros(s, nd);
    for src in 0..s {
        for dst in 1..s {
            transition.coefficients[src][dst] = (0..nd).map(|_| noise.sample(rng)).collect();
        }
    }
    let raw: Vec<f64> = (0..s).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    transition.initial_probs = raw.iter().map(|v| v / total).collect();
    Nhhmm {
        family,
        config: config.clone(),
        emission: EmissionParams { states },
        transition,
    }
}

/// Standard normal covariates with arbitrary responses of the right kind.
pub fn random_data<R: Rng>(family: Family, n: usize, p: usize, rng: &mut R) -> Dataset {
    let covariates: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    match family {
        Family::Gaussian => {
            let y = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
            Dataset::new(y, covariates, names).unwrap()
        }
        Family::Binomial => {
            let trials: Vec<u32> = (0..n).map(|_| rng.random_range(1..6)).collect();
            let y = trials.iter().map(|&t| rng.random_range(0..=t) as f64).collect();
            Dataset::new(y, covariates, names).unwrap().with_trials(trials).unwrap()
        }
    }
}

fn active(row: &[f64], mask: &[bool]) -> Vec<f64> {
    std::iter::once(1.0)
        .chain(row.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v))
        .collect()
}

fn lin(coef: &[f64], x: &[f64]) -> f64 {
    coef.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn choose(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Density written straight from the pdf/pmf formulas.
pub fn density(model: &Nhhmm, data: &Dataset, i: usize, state: usize) -> f64 {
    let x = active(data.row(i), &model.config.gamma);
    let st = &model.emission.states[state];
    let eta = lin(&st.coefficients, &x);
    let y = data.response[i];
    match model.family {
        Family::Gaussian => {
            let sd = st.dispersion;
            (-(y - eta).powi(2) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
        }
        Family::Binomial => {
            let n = data.trials.as_ref().unwrap()[i];
            let k = y as u32;
            let p = 1.0 / (1.0 + (-eta).exp());
            choose(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
        }
    }
}

/// Probability of moving from `src` to `dst` on entering observation `i`.
pub fn transition(model: &Nhhmm, data: &Dataset, i: usize, src: usize, dst: usize) -> f64 {
    let x = active(data.row(i), &model.config.delta);
    let s = model.n_states();
    let logits: Vec<f64> = (0..s)
        .map(|d| lin(&model.transition.coefficients[src][d], &x))
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits[dst].exp() / z
}

/// Visit every state path; returns the log-likelihood and the most probable path.
pub fn enumerate(model: &Nhhmm, data: &Dataset) -> (f64, Vec<usize>) {
    let s = model.n_states();
    let n = data.len();
    let mut path = vec![0usize; n];
    let mut log_terms = Vec::new();
    let mut best = (f64::NEG_INFINITY, path.clone());
    loop {
        let mut lp = (model.transition.initial_probs[path[0]] * density(model, data, 0, path[0])).ln();
        for i in 1..n {
            lp += (transition(model, data, i, path[i - 1], path[i]) * density(model, data, i, path[i])).ln();
        }
        if lp > best.0 {
            best = (lp, path.clone());
        }
        log_terms.push(lp);
        let mut pos = n;
        loop {
            if pos == 0 {
                let m = log_terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let ll = m + log_terms.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                return (ll, best.1);
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < s {
                break;
            }
            path[pos] = 0;
        }
    }
}

pub fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Negative-binomial pmf of the Gamma(shape, rate)-Poisson mixture.
pub fn nb_pmf(shape: f64, rate: f64, k: u64) -> f64 {
    let k = k as f64;
    (ln_gamma(shape + k) - ln_gamma(shape) - ln_gamma(k + 1.0) + shape * (rate / (1.0 + rate)).ln()
        - k * (1.0 + rate).ln())
    .exp()
}

pub fn beta_binomial_pmf(n: u64, a: f64, b: f64, k: u64) -> f64 {
    let ln_beta = |x: f64, y: f64| ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y);
    let (n, k) = (n as f64, k as f64);
    (ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0) + ln_beta(k + a, n - k + b) - ln_beta(a, b))
        .exp()
}
