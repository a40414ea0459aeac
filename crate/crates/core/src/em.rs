//! Expectation-maximisation for a fixed model configuration.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::emissions::{fit_weighted, EmissionParams, Family, StateEmission, SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::hmm::{forward_backward_prepared, Nhhmm, Prepared};
use crate::model_space::ModelConfig;
use crate::transitions::{fit_weighted_transitions, TransitionParams};

/// A state whose largest posterior probability drops below this is frozen.
pub const COLLAPSE_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmSettings {
    pub iterations: usize,
    pub loglik_tolerance: f64,
    pub restarts: usize,
}

impl Default for EmSettings {
    fn default() -> Self {
        EmSettings {
            iterations: 100,
            loglik_tolerance: 1e-8,
            restarts: 0,
        }
    }
}

impl EmSettings {
    pub fn with_iterations(iterations: usize) -> Self {
        EmSettings {
            iterations,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult {
    pub model: Nhhmm,
    /// The response sequence was constant, so every state starts identical.
    pub constant_response: bool,
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Random starting point for EM.
///
/// State `s` gets its intercept at the `(s + 1/2)/S` quantile of the response
/// (through the link); covariate coefficients are N(0, 0.1^2), transition
/// logits N(0, 0.5^2), the initial distribution is uniform.
pub fn init_params<R: Rng + ?Sized>(
    family: Family,
    config: &ModelConfig,
    data: &Dataset,
    n_states: usize,
    rng: &mut R,
) -> Result<InitResult> {
    if n_states == 0 {
        return Err(Error::config("at least one hidden state is required"));
    }
    if data.is_empty() {
        return Err(Error::input("cannot initialise on an empty dataset"));
    }
    let mut values: Vec<f64> = match family {
        Family::Gaussian => data.response.clone(),
        Family::Binomial => {
            let trials = data
                .trials
                .as_ref()
                .ok_or_else(|| Error::input("binomial family requires a trials column"))?;
            data.response
                .iter()
                .zip(trials)
                .filter(|(_, &n)| n > 0)
                .map(|(&y, &n)| y / n as f64)
                .collect()
        }
    };
    if values.is_empty() {
        values.push(0.5);
    }
    values.sort_by(f64::total_cmp);
    let constant_response = values.first() == values.last();

    let sd = {
        let n = data.len() as f64;
        let mean = data.response.iter().sum::<f64>() / n;
        (data.response.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt()
    };
    let dispersion = match family {
        Family::Gaussian => sd.max(SIGMA_FLOOR),
        Family::Binomial => 1.0,
    };
    let coef_noise = Normal::new(0.0, 0.1).expect("valid normal");
    let logit_noise = Normal::new(0.0, 0.5).expect("valid normal");
    let ng = config.n_gamma();
    let states = (0..n_states)
        .map(|s| {
            let q = (s as f64 + 0.5) / n_states as f64;
            let mut coefficients = Vec::with_capacity(1 + ng);
            coefficients.push(family.link(quantile_sorted(&values, q)));
            coefficients.extend((0..ng).map(|_| coef_noise.sample(rng)));
            StateEmission {
                coefficients,
                dispersion,
            }
        })
        .collect();
    let nd = 1 + config.n_delta();
    let mut transition = TransitionParams::zeros(n_states, nd);
    for src in 0..n_states {
        for dst in 1..n_states {
            for c in transition.coefficients[src][dst].iter_mut() {
                *c = logit_noise.sample(rng);
            }
        }
    }
    Ok(InitResult {
        model: Nhhmm {
            family,
            config: config.clone(),
            emission: EmissionParams { states },
            transition,
        },
        constant_response,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub model: Nhhmm,
    pub loglik: f64,
    /// Observed-data log-likelihood at every evaluated iterate.
    pub trace: Vec<f64>,
    /// States frozen because their posterior mass vanished.
    pub collapsed: Vec<usize>,
    /// Some coefficient hit the logit clamp.
    pub degenerate: bool,
}

impl EmResult {
    pub fn is_collapsed(&self) -> bool {
        !self.collapsed.is_empty()
    }
}

pub fn run_em(init: Nhhmm, data: &Dataset, settings: &EmSettings) -> Result<EmResult> {
    init.validate()?;
    let prep = Prepared::new(init.family, &init.config, data)?;
    run_em_prepared(init, &prep, settings)
}

/// Alternate exact E-steps with weighted M-steps for up to `settings.iterations` rounds.
pub fn run_em_prepared(init: Nhhmm, prep: &Prepared<'_>, settings: &EmSettings) -> Result<EmResult> {
    if settings.iterations == 0 {
        return Err(Error::config("EM needs at least one iteration"));
    }
    let s = init.n_states();
    let n = prep.len();
    let mut model = init;
    let mut trace = Vec::with_capacity(settings.iterations + 1);
    let mut best: Option<(Nhhmm, f64)> = None;
    let mut collapsed = vec![false; s];
    let mut degenerate = false;
    let mut weights = vec![0.0; n];

    for it in 0..=settings.iterations {
        let post = forward_backward_prepared(&model, prep)?;
        let ll = post.loglik;
        if !ll.is_finite() {
            return Err(Error::numerical(0, "non-finite log-likelihood during EM"));
        }
        let prev = trace.last().copied();
        trace.push(ll);
        if best.as_ref().is_none_or(|(_, b)| ll > *b) {
            best = Some((model.clone(), ll));
        }
        if it == settings.iterations {
            break;
        }
        if let Some(prev) = prev {
            if ll - prev < settings.loglik_tolerance {
                break;
            }
        }

        for (k, flag) in collapsed.iter_mut().enumerate() {
            let peak = (0..n).map(|i| post.gamma[i * s + k]).fold(0.0, f64::max);
            if peak < COLLAPSE_THRESHOLD {
                *flag = true;
            }
        }

        for k in 0..s {
            if collapsed[k] {
                continue;
            }
            for (i, w) in weights.iter_mut().enumerate() {
                *w = post.gamma[i * s + k];
            }
            let fit = fit_weighted(
                &prep.responses,
                &prep.emission_design,
                &weights,
                Some(&model.emission.states[k]),
            )?;
            degenerate |= fit.degenerate;
            model.emission.states[k] = fit.params;
        }
        if n > 1 && s > 1 {
            let fit = fit_weighted_transitions(
                &post.xi,
                &prep.transition_design,
                post.gamma_row(0),
                Some(&model.transition),
            )?;
            degenerate |= fit.degenerate;
            let mut next = fit.params;
            for (k, &c) in collapsed.iter().enumerate() {
                if c {
                    next.coefficients[k] = model.transition.coefficients[k].clone();
                }
            }
            model.transition = next;
        } else {
            model.transition.initial_probs = post.gamma_row(0).to_vec();
        }
    }
    let (model, loglik) = best.expect("at least one E-step ran");
    Ok(EmResult {
        model,
        loglik,
        trace,
        collapsed: (0..s).filter(|&k| collapsed[k]).collect(),
        degenerate,
    })
}

/// Fit one configuration from `1 + restarts` random starts and keep the best.
pub fn fit_config<R: Rng + ?Sized>(
    family: Family,
    config: &ModelConfig,
    data: &Dataset,
    n_states: usize,
    settings: &EmSettings,
    rng: &mut R,
) -> Result<EmResult> {
    let prep = Prepared::new(family, config, data)?;
    let mut best: Option<EmResult> = None;
    for _ in 0..=settings.restarts {
        let init = init_params(family, config, data, n_states, rng)?.model;
        let res = run_em_prepared(init, &prep, settings)?;
        let better = match &best {
            None => true,
            Some(b) => (!res.is_collapsed() && b.is_collapsed()) || (res.is_collapsed() == b.is_collapsed() && res.loglik > b.loglik),
        };
        if better {
            best = Some(res);
        }
    }
    Ok(best.expect("at least one start"))
}
