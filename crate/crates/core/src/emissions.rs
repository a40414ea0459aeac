//! State-conditional emission distributions and their weighted M-step fits.
//!
//! Both families use their canonical link: identity for Gaussian, logit for
//! Binomial. The weighted log-likelihood is concave in the coefficients for
//! either family, so the M-step is a Newton (IRLS) ascent with step halving.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, Design};
use crate::error::{Error, Result};
use crate::linalg::solve_psd;

/// Bound on binomial coefficients on the logit scale.
pub const COEF_CLAMP: f64 = 30.0;
/// Smallest Gaussian standard deviation the M-step will return.
pub const SIGMA_FLOOR: f64 = 1e-8;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Binomial,
}

impl Family {
    /// Mean parameter for a linear predictor.
    #[inline]
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => logistic(eta),
        }
    }

    /// Linear predictor for a mean parameter (clamped for the logit).
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => {
                let m = mu.clamp(1e-4, 1.0 - 1e-4);
                (m / (1.0 - m)).ln()
            }
        }
    }

    pub fn has_dispersion(self) -> bool {
        matches!(self, Family::Gaussian)
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" => Ok(Family::Binomial),
            other => Err(Error::config(format!("unknown family {other:?}"))),
        }
    }
}

#[inline]
pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Coefficients (intercept first) and dispersion of a single state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateEmission {
    pub coefficients: Vec<f64>,
    pub dispersion: f64,
}

/// Emission parameters for every state. All coefficient vectors share one length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionParams {
    pub states: Vec<StateEmission>,
}

impl EmissionParams {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.states.first().map_or(0, |s| s.coefficients.len())
    }

    pub fn validate(&self, family: Family) -> Result<()> {
        let k = self.n_coefficients();
        for (s, st) in self.states.iter().enumerate() {
            if st.coefficients.len() != k {
                return Err(Error::config(format!(
                    "state {s} has {} emission coefficients, expected {k}",
                    st.coefficients.len()
                )));
            }
            match family {
                Family::Gaussian if !(st.dispersion > 0.0) => {
                    return Err(Error::config(format!("state {s} has non-positive dispersion")))
                }
                Family::Binomial if st.dispersion != 1.0 => {
                    return Err(Error::config(format!("binomial state {s} must have dispersion 1")))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// Response vector with per-observation constants precomputed once.
#[derive(Debug, Clone)]
pub struct Responses<'a> {
    pub family: Family,
    pub y: &'a [f64],
    pub trials: Option<&'a [u32]>,
    log_norm: Vec<f64>,
}

impl<'a> Responses<'a> {
    pub fn new(family: Family, y: &'a [f64], trials: Option<&'a [u32]>) -> Result<Self> {
        let log_norm = match family {
            Family::Gaussian => vec![-LN_SQRT_2PI; y.len()],
            Family::Binomial => {
                let t = trials.ok_or_else(|| Error::input("binomial family requires a trials column"))?;
                if t.len() != y.len() {
                    return Err(Error::input("trials length does not match response length"));
                }
                y.iter()
                    .zip(t)
                    .enumerate()
                    .map(|(i, (&yi, &ni))| {
                        if yi < 0.0 || yi.fract() != 0.0 || yi > ni as f64 {
                            return Err(Error::input(format!(
                                "row {i}: binomial response {yi} is not an integer in 0..={ni}"
                            )));
                        }
                        Ok(ln_choose(ni as u64, yi as u64))
                    })
                    .collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Responses {
            family,
            y,
            trials,
            log_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Log density of observation `i` under linear predictor `eta` and dispersion `sigma`.
    #[inline]
    pub fn log_density_at(&self, i: usize, eta: f64, sigma: f64) -> f64 {
        let y = self.y[i];
        match self.family {
            Family::Gaussian => {
                let z = (y - eta) / sigma;
                self.log_norm[i] - sigma.ln() - 0.5 * z * z
            }
            Family::Binomial => {
                let n = self.trials.map_or(1.0, |t| t[i] as f64);
                // y log p + (n - y) log(1 - p) = y eta - n softplus(eta)
                self.log_norm[i] + y * eta - n * softplus(eta)
            }
        }
    }

    /// Weighted log-likelihood of one state's parameters, dropping nothing.
    pub fn weighted_loglik(&self, design: &Design, weights: &[f64], params: &StateEmission) -> f64 {
        (0..self.len())
            .filter(|&i| weights[i] > 0.0)
            .map(|i| weights[i] * self.log_density_at(i, dot(design.row(i), &params.coefficients), params.dispersion))
            .sum()
    }

    /// Gradient of the weighted log-likelihood with respect to the coefficients.
    pub fn weighted_score(&self, design: &Design, weights: &[f64], params: &StateEmission) -> Vec<f64> {
        let mut g = vec![0.0; design.cols];
        let s2 = params.dispersion * params.dispersion;
        for i in 0..self.len() {
            let w = weights[i];
            if w == 0.0 {
                continue;
            }
            let x = design.row(i);
            let eta = dot(x, &params.coefficients);
            let r = match self.family {
                Family::Gaussian => (self.y[i] - eta) / s2,
                Family::Binomial => {
                    let n = self.trials.map_or(1.0, |t| t[i] as f64);
                    self.y[i] - n * logistic(eta)
                }
            };
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += w * r * xj;
            }
        }
        g
    }
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if k == 0 || k == n {
        return 0.0;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log density of `y` in state `state`; `x_active` holds only the active covariates.
pub fn log_density(
    family: Family,
    params: &EmissionParams,
    state: usize,
    y: f64,
    trials: Option<u32>,
    x_active: &[f64],
) -> Result<f64> {
    let st = &params.states[state];
    if x_active.len() + 1 != st.coefficients.len() {
        return Err(Error::input(format!(
            "expected {} active covariates, got {}",
            st.coefficients.len() - 1,
            x_active.len()
        )));
    }
    let eta = st.coefficients[0] + dot(&st.coefficients[1..], x_active);
    if !eta.is_finite() {
        return Err(Error::numerical(0, format!("non-finite linear predictor in state {state}")));
    }
    let t = trials.map(|t| [t]);
    let yv = [y];
    let resp = Responses::new(family, &yv, t.as_ref().map(|t| &t[..]))?;
    Ok(resp.log_density_at(0, eta, st.dispersion))
}

/// Outcome of a weighted emission fit.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedFit {
    pub params: StateEmission,
    pub loglik: f64,
    pub iterations: usize,
    /// Set when a coefficient hit the logit clamp (quasi-separated data).
    pub degenerate: bool,
}

/// Weighted maximum-likelihood fit of one state's regression.
///
/// The result never has a lower weighted log-likelihood than `init`.
pub fn fit_weighted(
    resp: &Responses<'_>,
    design: &Design,
    weights: &[f64],
    init: Option<&StateEmission>,
) -> Result<WeightedFit> {
    if weights.len() != resp.len() || design.rows != resp.len() {
        return Err(Error::input("weights, design and responses must have equal length"));
    }
    if let Some(i) = weights.iter().position(|w| !(*w >= 0.0)) {
        return Err(Error::input(format!("weight at index {i} is negative or NaN")));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::input("weights sum to zero"));
    }
    if let Some(init) = init {
        if init.coefficients.len() != design.cols {
            return Err(Error::input("init coefficient count does not match design"));
        }
    }
    let fit = match resp.family {
        Family::Gaussian => fit_gaussian(resp, design, weights, total),
        Family::Binomial => fit_binomial(resp, design, weights, init),
    };
    // Guard against any solver breakdown: never return something worse than init.
    if let Some(init) = init {
        let init_ll = resp.weighted_loglik(design, weights, init);
        if !(fit.loglik >= init_ll) {
            return Ok(WeightedFit {
                params: init.clone(),
                loglik: init_ll,
                iterations: fit.iterations,
                degenerate: fit.degenerate,
            });
        }
    }
    Ok(fit)
}

fn normal_equations(design: &Design, weights: &[f64], curvature: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let k = design.cols;
    let mut a = vec![0.0; k * k];
    for i in 0..design.rows {
        let w = weights[i] * curvature(i);
        if w == 0.0 {
            continue;
        }
        let x = design.row(i);
        for (r, arow) in a.chunks_exact_mut(k).enumerate() {
            let wx = w * x[r];
            for (acell, xc) in arow[..=r].iter_mut().zip(x) {
                *acell += wx * xc;
            }
        }
    }
    let mut m = DMatrix::from_row_slice(k, k, &a);
    m.fill_upper_triangle_with_lower_triangle();
    m
}

fn fit_gaussian(resp: &Responses<'_>, design: &Design, weights: &[f64], total: f64) -> WeightedFit {
    let k = design.cols;
    let a = normal_equations(design, weights, |_| 1.0);
    let mut b = DVector::<f64>::zeros(k);
    for i in 0..design.rows {
        let w = weights[i];
        if w == 0.0 {
            continue;
        }
        for (bj, xj) in b.iter_mut().zip(design.row(i)) {
            *bj += w * resp.y[i] * xj;
        }
    }
    let coefficients: Vec<f64> = solve_psd(&a, &b).map_or_else(|| vec![0.0; k], |x| x.iter().copied().collect());
    let ss: f64 = (0..design.rows)
        .filter(|&i| weights[i] > 0.0)
        .map(|i| {
            let r = resp.y[i] - dot(design.row(i), &coefficients);
            weights[i] * r * r
        })
        .sum();
    let dispersion = (ss / total).sqrt().max(SIGMA_FLOOR);
    let params = StateEmission {
        coefficients,
        dispersion,
    };
    let loglik = resp.weighted_loglik(design, weights, &params);
    WeightedFit {
        params,
        loglik,
        iterations: 1,
        degenerate: false,
    }
}

fn clamp_coefs(v: &mut [f64]) -> bool {
    let mut hit = false;
    for c in v.iter_mut() {
        if c.abs() >= COEF_CLAMP {
            *c = c.clamp(-COEF_CLAMP, COEF_CLAMP);
            hit = true;
        }
    }
    hit
}

fn fit_binomial(resp: &Responses<'_>, design: &Design, weights: &[f64], init: Option<&StateEmission>) -> WeightedFit {
    let k = design.cols;
    let trials = |i: usize| resp.trials.map_or(1.0, |t| t[i] as f64);
    let mut beta = match init {
        Some(s) => s.coefficients.clone(),
        None => {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..resp.len() {
                num += weights[i] * resp.y[i];
                den += weights[i] * trials(i);
            }
            let mut b = vec![0.0; k];
            b[0] = if den > 0.0 { Family::Binomial.link(num / den) } else { 0.0 };
            b
        }
    };
    let mut degenerate = clamp_coefs(&mut beta);
    let mut current = StateEmission {
        coefficients: beta,
        dispersion: 1.0,
    };
    let mut ll = resp.weighted_loglik(design, weights, &current);
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let g = resp.weighted_score(design, weights, &current);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= GRAD_TOL {
            break;
        }
        iterations += 1;
        let h = normal_equations(design, weights, |i| {
            let p = logistic(dot(design.row(i), &current.coefficients));
            trials(i) * p * (1.0 - p)
        });
        let Some(step) = solve_psd(&h, &DVector::from_vec(g)) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = current.coefficients.iter().zip(step.iter()).map(|(b, d)| b + t * d).collect();
            let hit = clamp_coefs(&mut cand);
            let cand = StateEmission {
                coefficients: cand,
                dispersion: 1.0,
            };
            let cand_ll = resp.weighted_loglik(design, weights, &cand);
            if cand_ll >= ll {
                let gain = cand_ll - ll;
                degenerate |= hit;
                current = cand;
                ll = cand_ll;
                accepted = gain > 1e-14 * ll.abs().max(1.0) || gain > 0.0 && t == 1.0;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    degenerate |= current.coefficients.iter().any(|c| c.abs() >= COEF_CLAMP);
    // Perfect separation: every weighted fitted probability saturated at 0 or 1.
    degenerate |= (0..resp.len()).filter(|&i| weights[i] > 0.0).all(|i| {
        let p = logistic(dot(design.row(i), &current.coefficients));
        p * (1.0 - p) < 1e-6
    });
    WeightedFit {
        params: current,
        loglik: ll,
        iterations,
        degenerate,
    }
}
