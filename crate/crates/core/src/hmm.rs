//! The assembled non-homogeneous HMM: scaled forward-backward, Viterbi
//! decoding and information criteria.

use serde::{Deserialize, Serialize};

use crate::data::{dot, Dataset, Design};
use crate::emissions::{EmissionParams, Family, Responses};
use crate::error::{Error, Result};
use crate::model_space::ModelConfig;
use crate::transitions::TransitionParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nhhmm {
    pub family: Family,
    pub config: ModelConfig,
    pub emission: EmissionParams,
    pub transition: TransitionParams,
}

impl Nhhmm {
    pub fn n_states(&self) -> usize {
        self.emission.n_states()
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        if s == 0 {
            return Err(Error::config("model has no states"));
        }
        if self.transition.n_states() != s {
            return Err(Error::config("emission and transition state counts differ"));
        }
        if self.emission.n_coefficients() != 1 + self.config.n_gamma() {
            return Err(Error::config(format!(
                "emission has {} coefficients but the config activates {} covariates",
                self.emission.n_coefficients(),
                self.config.n_gamma()
            )));
        }
        if self.transition.n_coefficients() != 1 + self.config.n_delta() {
            return Err(Error::config(format!(
                "transitions have {} coefficients but the config activates {} covariates",
                self.transition.n_coefficients(),
                self.config.n_delta()
            )));
        }
        self.emission.validate(self.family)?;
        self.transition.validate()
    }

    /// Mean response of state `s` at design row `x` (intercept first).
    pub fn state_mean(&self, s: usize, x: &[f64]) -> f64 {
        self.family
            .inverse_link(dot(&self.emission.states[s].coefficients, x))
    }

    /// Free-parameter count used by the information criteria.
    pub fn free_parameters(&self) -> usize {
        free_parameters(self.family, self.n_states(), &self.config)
    }

    /// Apply a state permutation: new state `k` is old state `perm[k]`.
    pub fn permute_states(&self, perm: &[usize]) -> Nhhmm {
        let s = self.n_states();
        let emission = EmissionParams {
            states: perm.iter().map(|&o| self.emission.states[o].clone()).collect(),
        };
        // Re-reference every source on the new destination 0 so its row stays zero.
        let coefficients = (0..s)
            .map(|src| {
                let old = &self.transition.coefficients[perm[src]];
                let base = &old[perm[0]];
                (0..s)
                    .map(|dst| old[perm[dst]].iter().zip(base).map(|(a, b)| a - b).collect())
                    .collect()
            })
            .collect();
        Nhhmm {
            family: self.family,
            config: self.config.clone(),
            emission,
            transition: TransitionParams {
                coefficients,
                initial_probs: perm.iter().map(|&o| self.transition.initial_probs[o]).collect(),
            },
        }
    }
}

/// `k = (S-1) + S(S-1)(1+|delta|) + S(1+|gamma|) + S*[Gaussian]`.
pub fn free_parameters(family: Family, n_states: usize, config: &ModelConfig) -> usize {
    let s = n_states;
    let dispersions = if family.has_dispersion() { s } else { 0 };
    (s - 1) + s * (s - 1) * (1 + config.n_delta()) + s * (1 + config.n_gamma()) + dispersions
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Criterion {
    Aic,
    Bic,
}

impl Criterion {
    pub fn value(self, loglik: f64, k: usize, n: usize) -> f64 {
        match self {
            Criterion::Aic => -2.0 * loglik + 2.0 * k as f64,
            Criterion::Bic => -2.0 * loglik + k as f64 * (n as f64).ln(),
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AIC" => Ok(Criterion::Aic),
            "BIC" => Ok(Criterion::Bic),
            other => Err(Error::config(format!("unsupported criterion {other:?} (AIC or BIC)"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Criterion::Aic => "AIC",
            Criterion::Bic => "BIC",
        })
    }
}

/// Data bound to one model configuration: responses plus both design matrices.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub responses: Responses<'a>,
    pub emission_design: Design,
    pub transition_design: Design,
}

impl<'a> Prepared<'a> {
    pub fn new(family: Family, config: &ModelConfig, data: &'a Dataset) -> Result<Self> {
        if config.len() != data.n_covariates() {
            return Err(Error::input(format!(
                "config covers {} covariates but the data has {}",
                config.len(),
                data.n_covariates()
            )));
        }
        let responses = Responses::new(family, &data.response, data.trials.as_deref())?;
        Ok(Prepared {
            responses,
            emission_design: data.design(&config.gamma),
            transition_design: data.design(&config.delta),
        })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

/// Smoothed posteriors from one forward-backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummaries {
    pub n_states: usize,
    /// `n x S`, row-major.
    pub gamma: Vec<f64>,
    /// `(n-1) x S x S`; slab `t` is the pair `(s_t, s_{t+1})`.
    pub xi: Vec<f64>,
    pub loglik: f64,
}

impl PosteriorSummaries {
    pub fn gamma_row(&self, i: usize) -> &[f64] {
        &self.gamma[i * self.n_states..(i + 1) * self.n_states]
    }
}

/// Emission log densities, `n x S` row-major.
pub(crate) fn log_emissions(model: &Nhhmm, prep: &Prepared<'_>) -> Result<Vec<f64>> {
    let s = model.n_states();
    let n = prep.len();
    let mut out = vec![0.0; n * s];
    for i in 0..n {
        let x = prep.emission_design.row(i);
        for (k, st) in model.emission.states.iter().enumerate() {
            let eta = dot(&st.coefficients, x);
            if !eta.is_finite() {
                return Err(Error::numerical(i, format!("non-finite emission predictor in state {k}")));
            }
            out[i * s + k] = prep.responses.log_density_at(i, eta, st.dispersion);
        }
    }
    Ok(out)
}

/// Transition matrices for every index `1..n` (slab `t` is the step into `t + 1`).
///
/// When no transition covariate is active a single shared matrix is returned.
pub(crate) struct TransitionSeq {
    s: usize,
    shared: bool,
    data: Vec<f64>,
}

impl TransitionSeq {
    pub(crate) fn new(model: &Nhhmm, design: &Design) -> Result<Self> {
        let s = model.n_states();
        let n = design.rows;
        if design.cols == 1 {
            let mut data = vec![0.0; s * s];
            model.transition.fill_matrix(&[1.0], &mut data)?;
            return Ok(TransitionSeq { s, shared: true, data });
        }
        let steps = n.saturating_sub(1);
        let mut data = vec![0.0; steps * s * s];
        for t in 0..steps {
            model
                .transition
                .fill_matrix(design.row(t + 1), &mut data[t * s * s..(t + 1) * s * s])
                .map_err(|e| match e {
                    Error::Numerical { message, .. } => Error::numerical(t + 1, message),
                    other => other,
                })?;
        }
        Ok(TransitionSeq { s, shared: false, data })
    }

    #[inline]
    pub(crate) fn step(&self, t: usize) -> &[f64] {
        let ss = self.s * self.s;
        if self.shared {
            &self.data
        } else {
            &self.data[t * ss..(t + 1) * ss]
        }
    }
}

fn scaled_emissions(logf: &[f64], s: usize, i: usize) -> Result<(Vec<f64>, f64)> {
    let row = &logf[i * s..(i + 1) * s];
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::ImpossibleObservation(i));
    }
    if !max.is_finite() {
        return Err(Error::numerical(i, "non-finite emission density"));
    }
    Ok((row.iter().map(|v| (v - max).exp()).collect(), max))
}

pub fn forward_backward(model: &Nhhmm, data: &Dataset) -> Result<PosteriorSummaries> {
    model.validate()?;
    let prep = Prepared::new(model.family, &model.config, data)?;
    forward_backward_prepared(model, &prep)
}

/// Forward-backward with per-index normalisation of the forward variables.
pub fn forward_backward_prepared(model: &Nhhmm, prep: &Prepared<'_>) -> Result<PosteriorSummaries> {
    let s = model.n_states();
    let n = prep.len();
    if n == 0 {
        return Err(Error::input("empty observation sequence"));
    }
    let logf = log_emissions(model, prep)?;
    let trans = TransitionSeq::new(model, &prep.transition_design)?;

    let mut fw = vec![0.0; n * s];
    let mut dens = vec![0.0; n * s];
    let mut scale = vec![0.0; n];
    let mut loglik = 0.0;
    for i in 0..n {
        let (f, m) = scaled_emissions(&logf, s, i)?;
        dens[i * s..(i + 1) * s].copy_from_slice(&f);
        let mut c = 0.0;
        for k in 0..s {
            let prior = if i == 0 {
                model.transition.initial_probs[k]
            } else {
                let a = trans.step(i - 1);
                (0..s).map(|j| fw[(i - 1) * s + j] * a[j * s + k]).sum()
            };
            let v = prior * f[k];
            fw[i * s + k] = v;
            c += v;
        }
        if !(c > 0.0) {
            return Err(Error::ImpossibleObservation(i));
        }
        for k in 0..s {
            fw[i * s + k] /= c;
        }
        scale[i] = c;
        loglik += c.ln() + m;
    }

    let mut bw = vec![1.0; n * s];
    for i in (0..n.saturating_sub(1)).rev() {
        let a = trans.step(i);
        for j in 0..s {
            let mut acc = 0.0;
            for k in 0..s {
                acc += a[j * s + k] * dens[(i + 1) * s + k] * bw[(i + 1) * s + k];
            }
            bw[i * s + j] = acc / scale[i + 1];
        }
    }

    let mut gamma = vec![0.0; n * s];
    for i in 0..n {
        let mut z = 0.0;
        for k in 0..s {
            let v = fw[i * s + k] * bw[i * s + k];
            gamma[i * s + k] = v;
            z += v;
        }
        for k in 0..s {
            gamma[i * s + k] /= z;
        }
    }
    let mut xi = vec![0.0; n.saturating_sub(1) * s * s];
    for t in 0..n.saturating_sub(1) {
        let a = trans.step(t);
        let slab = &mut xi[t * s * s..(t + 1) * s * s];
        let mut z = 0.0;
        for j in 0..s {
            for k in 0..s {
                let v = fw[t * s + j] * a[j * s + k] * dens[(t + 1) * s + k] * bw[(t + 1) * s + k];
                slab[j * s + k] = v;
                z += v;
            }
        }
        for v in slab.iter_mut() {
            *v /= z;
        }
    }
    Ok(PosteriorSummaries {
        n_states: s,
        gamma,
        xi,
        loglik,
    })
}

/// Observed-data log-likelihood from a pure log-space backward recursion.
///
/// Independent of the scaled forward pass; used to cross-check it.
pub fn backward_loglik(model: &Nhhmm, data: &Dataset) -> Result<f64> {
    model.validate()?;
    let prep = Prepared::new(model.family, &model.config, data)?;
    let s = model.n_states();
    let n = prep.len();
    if n == 0 {
        return Err(Error::input("empty observation sequence"));
    }
    let logf = log_emissions(model, &prep)?;
    let trans = TransitionSeq::new(model, &prep.transition_design)?;
    let mut beta = vec![0.0; s];
    let mut terms = vec![0.0; s];
    for i in (0..n - 1).rev() {
        let a = trans.step(i);
        let next: Vec<f64> = (0..s)
            .map(|j| {
                for k in 0..s {
                    terms[k] = a[j * s + k].ln() + logf[(i + 1) * s + k] + beta[k];
                }
                log_sum_exp(&terms)
            })
            .collect();
        beta = next;
    }
    for k in 0..s {
        terms[k] = model.transition.initial_probs[k].ln() + logf[k] + beta[k];
    }
    let ll = log_sum_exp(&terms);
    if ll == f64::NEG_INFINITY {
        return Err(Error::ImpossibleObservation(0));
    }
    Ok(ll)
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub log_prob: f64,
}

pub fn viterbi(model: &Nhhmm, data: &Dataset) -> Result<ViterbiPath> {
    model.validate()?;
    let prep = Prepared::new(model.family, &model.config, data)?;
    viterbi_prepared(model, &prep)
}

/// Most probable state path; ties go to the lower state index.
pub fn viterbi_prepared(model: &Nhhmm, prep: &Prepared<'_>) -> Result<ViterbiPath> {
    let s = model.n_states();
    let n = prep.len();
    if n == 0 {
        return Err(Error::input("empty observation sequence"));
    }
    let logf = log_emissions(model, prep)?;
    let trans = TransitionSeq::new(model, &prep.transition_design)?;
    let mut score: Vec<f64> = (0..s)
        .map(|k| model.transition.initial_probs[k].ln() + logf[k])
        .collect();
    if score.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::ImpossibleObservation(0));
    }
    let mut back = vec![0usize; n * s];
    let mut next = vec![0.0; s];
    for i in 1..n {
        let a = trans.step(i - 1);
        for k in 0..s {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for j in 0..s {
                let v = score[j] + a[j * s + k].ln();
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            next[k] = best + logf[i * s + k];
            back[i * s + k] = arg;
        }
        if next.iter().all(|v| *v == f64::NEG_INFINITY) {
            return Err(Error::ImpossibleObservation(i));
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut last = 0;
    for k in 1..s {
        if score[k] > score[last] {
            last = k;
        }
    }
    let log_prob = score[last];
    let mut states = vec![0; n];
    states[n - 1] = last;
    for i in (1..n).rev() {
        states[i - 1] = back[i * s + states[i]];
    }
    Ok(ViterbiPath { states, log_prob })
}

/// Information criterion of a fitted model on `data`.
pub fn criterion(model: &Nhhmm, data: &Dataset, which: Criterion) -> Result<f64> {
    if which == Criterion::Bic && data.len() < 2 {
        return Err(Error::input("BIC needs at least two observations"));
    }
    let post = forward_backward(model, data)?;
    Ok(which.value(post.loglik, model.free_parameters(), data.len()))
}
