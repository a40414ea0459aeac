//! Synthetic sequences drawn from a known NHHMM.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal, StandardNormal};

use crate::data::Dataset;
use crate::emissions::{EmissionParams, Family, StateEmission};
use crate::error::{Error, Result};
use crate::hmm::Nhhmm;
use crate::model_space::ModelConfig;
use crate::transitions::TransitionParams;

/// Simulated data together with the hidden path that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub data: Dataset,
    pub states: Vec<usize>,
}

fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    probs.len() - 1
}

/// Draw `n` observations. Covariates are i.i.d. standard normal with
/// `p = model.config.len()` columns; Binomial responses use `trials` per row.
pub fn simulate<R: Rng + ?Sized>(model: &Nhhmm, n: usize, trials: Option<u32>, rng: &mut R) -> Result<Simulation> {
    model.validate()?;
    if n == 0 {
        return Err(Error::input("cannot simulate an empty sequence"));
    }
    if model.family == Family::Binomial && trials.is_none() {
        return Err(Error::input("binomial simulation needs a trial count"));
    }
    let p = model.config.len();
    let s = model.n_states();
    let covariates: Vec<f64> = (0..n * p).map(|_| rng.sample(StandardNormal)).collect();
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let mut response = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n);
    let mut matrix = vec![0.0; s * s];
    for i in 0..n {
        let row = &covariates[i * p..(i + 1) * p];
        let select = |mask: &[bool]| {
            std::iter::once(1.0)
                .chain(row.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v))
                .collect::<Vec<f64>>()
        };
        let state = if i == 0 {
            draw_index(&model.transition.initial_probs, rng)
        } else {
            model.transition.fill_matrix(&select(&model.config.delta), &mut matrix)?;
            let prev = states[i - 1];
            draw_index(&matrix[prev * s..(prev + 1) * s], rng)
        };
        let mean = model.state_mean(state, &select(&model.config.gamma));
        let y = match model.family {
            Family::Gaussian => {
                let sigma = model.emission.states[state].dispersion;
                Normal::new(mean, sigma)
                    .map_err(|e| Error::config(e.to_string()))?
                    .sample(rng)
            }
            Family::Binomial => {
                let t = trials.unwrap_or(0);
                Binomial::new(u64::from(t), mean)
                    .map_err(|e| Error::config(e.to_string()))?
                    .sample(rng) as f64
            }
        };
        states.push(state);
        response.push(y);
    }
    let mut data = Dataset::new(response, covariates, names)?;
    if let Some(t) = trials {
        if model.family == Family::Binomial {
            data = data.with_trials(vec![t; n])?;
        }
    }
    Ok(Simulation { data, states })
}

/// Two-state Gaussian scenario with a clear signal: covariates 1 and 2 enter
/// the emissions, covariate 3 drives the transitions and the rest are noise.
pub fn recovery_model(p: usize) -> Result<Nhhmm> {
    if p < 3 {
        return Err(Error::config("the recovery scenario needs at least three covariates"));
    }
    let mut config = ModelConfig::empty(p);
    config.gamma[0] = true;
    config.gamma[1] = true;
    config.delta[2] = true;
    let mut transition = TransitionParams::zeros(2, 2);
    transition.coefficients[0][1] = vec![-1.5, 2.5];
    transition.coefficients[1][1] = vec![1.5, -2.5];
    transition.initial_probs = vec![0.5, 0.5];
    Ok(Nhhmm {
        family: Family::Gaussian,
        config,
        emission: EmissionParams {
            states: vec![
                StateEmission {
                    coefficients: vec![0.0, 1.5, -1.0],
                    dispersion: 1.0,
                },
                StateEmission {
                    coefficients: vec![4.0, -1.0, 1.5],
                    dispersion: 1.0,
                },
            ],
        },
        transition,
    })
}
