//! Covariate-dependent transition probabilities.
//!
//! Each source state carries a multinomial-logistic (softmax) regression over
//! destination states. Destination 0 is the reference category and its
//! coefficients are pinned at zero.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{dot, Design};
use crate::emissions::COEF_CLAMP;
use crate::error::{Error, Result};
use crate::linalg::solve_psd;

const GRAD_TOL: f64 = 1e-8;
const MAX_ITER: usize = 100;
/// Sources whose total pair weight falls below this are left untouched.
const MIN_SOURCE_WEIGHT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    /// `coefficients[source][destination]`, each of length `1 + |delta|`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    pub initial_probs: Vec<f64>,
}

impl TransitionParams {
    pub fn zeros(n_states: usize, n_coefficients: usize) -> Self {
        TransitionParams {
            coefficients: vec![vec![vec![0.0; n_coefficients]; n_states]; n_states],
            initial_probs: vec![1.0 / n_states as f64; n_states],
        }
    }

    pub fn n_states(&self) -> usize {
        self.initial_probs.len()
    }

    pub fn n_coefficients(&self) -> usize {
        self.coefficients
            .first()
            .and_then(|r| r.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.n_states();
        let q = self.n_coefficients();
        if self.coefficients.len() != s || self.coefficients.iter().any(|r| r.len() != s) {
            return Err(Error::config("transition coefficient array is not S x S"));
        }
        for (src, rows) in self.coefficients.iter().enumerate() {
            if rows.iter().any(|c| c.len() != q) {
                return Err(Error::config(format!("source {src} has ragged transition coefficients")));
            }
            if rows[0].iter().any(|&c| c != 0.0) {
                return Err(Error::config(format!(
                    "reference destination row of source {src} must be zero"
                )));
            }
        }
        let total: f64 = self.initial_probs.iter().sum();
        if self.initial_probs.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::config("initial probabilities must be non-negative and sum to 1"));
        }
        Ok(())
    }

    /// Row-major `S x S` transition matrix for a design row (intercept first).
    pub fn fill_matrix(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = self.n_states();
        for src in 0..s {
            let row = &mut out[src * s..(src + 1) * s];
            let mut max = f64::NEG_INFINITY;
            for (dst, r) in row.iter_mut().enumerate() {
                let eta = dot(&self.coefficients[src][dst], x);
                if !eta.is_finite() {
                    return Err(Error::numerical(
                        0,
                        format!("non-finite transition logit for source {src} destination {dst}"),
                    ));
                }
                *r = eta;
                max = max.max(eta);
            }
            let mut z = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                z += *r;
            }
            for r in row.iter_mut() {
                *r /= z;
            }
        }
        Ok(())
    }
}

/// Transition matrix at one index; `x_active` holds only the active covariates.
pub fn transition_matrix(params: &TransitionParams, x_active: &[f64]) -> Result<Vec<Vec<f64>>> {
    let q = params.n_coefficients();
    if x_active.len() + 1 != q {
        return Err(Error::input(format!(
            "expected {} active transition covariates, got {}",
            q - 1,
            x_active.len()
        )));
    }
    let s = params.n_states();
    let mut x = Vec::with_capacity(q);
    x.push(1.0);
    x.extend_from_slice(x_active);
    let mut flat = vec![0.0; s * s];
    params.fill_matrix(&x, &mut flat)?;
    Ok(flat.chunks(s).map(<[f64]>::to_vec).collect())
}

/// Expected complete-data transition log-likelihood
/// `sum_i sum_{s',s} xi_i(s',s) log p(s | s', x_i)`.
///
/// `pair_weights` holds one `S x S` slab per transition; slab `t` is the
/// transition into observation `t + 1` and uses design row `t + 1`.
pub fn expected_loglik(pair_weights: &[f64], design: &Design, params: &TransitionParams) -> Result<f64> {
    let s = params.n_states();
    let mut a = vec![0.0; s * s];
    let mut total = 0.0;
    for (t, slab) in pair_weights.chunks(s * s).enumerate() {
        params.fill_matrix(design.row(t + 1), &mut a)?;
        for (w, p) in slab.iter().zip(&a) {
            if *w > 0.0 {
                total += w * p.ln();
            }
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionFit {
    pub params: TransitionParams,
    /// Sources with no effective sample; their coefficients were left at init.
    pub empty_sources: Vec<usize>,
    pub degenerate: bool,
}

/// Weighted M-step for the transition model.
///
/// `initial_posterior` is the smoothed state distribution at the first index
/// and becomes the new initial-state distribution.
pub fn fit_weighted_transitions(
    pair_weights: &[f64],
    design: &Design,
    initial_posterior: &[f64],
    init: Option<&TransitionParams>,
) -> Result<TransitionFit> {
    let s = initial_posterior.len();
    if s == 0 {
        return Err(Error::input("no states"));
    }
    if pair_weights.len() % (s * s) != 0 || pair_weights.len() / (s * s) + 1 != design.rows.max(1) {
        return Err(Error::input("pair weights do not match the design length"));
    }
    if let Some(i) = pair_weights.iter().position(|w| !(*w >= 0.0)) {
        return Err(Error::input(format!("pair weight {i} is negative or NaN")));
    }
    let mut params = match init {
        Some(p) => {
            if p.n_states() != s || p.n_coefficients() != design.cols {
                return Err(Error::input("init transition parameters do not match the design"));
            }
            p.clone()
        }
        None => TransitionParams::zeros(s, design.cols),
    };
    let total: f64 = initial_posterior.iter().sum();
    params.initial_probs = initial_posterior.iter().map(|p| p / total).collect();

    let mut empty_sources = Vec::new();
    let mut degenerate = false;
    for src in 0..s {
        let weight: f64 = pair_weights
            .chunks(s * s)
            .map(|slab| slab[src * s..(src + 1) * s].iter().sum::<f64>())
            .sum();
        if weight < MIN_SOURCE_WEIGHT || s == 1 {
            if s > 1 {
                empty_sources.push(src);
            }
            continue;
        }
        let (coefs, hit) = fit_source(pair_weights, design, s, src, &params.coefficients[src]);
        params.coefficients[src] = coefs;
        degenerate |= hit;
    }
    Ok(TransitionFit {
        params,
        empty_sources,
        degenerate,
    })
}

/// Objective of a single source, `sum_i sum_d xi_i(src,d) log softmax_d`, with
/// its gradient and Hessian over the non-reference destinations when requested.
struct SourcePass {
    objective: f64,
    gradient: Vec<f64>,
    hessian: Vec<f64>,
}

fn source_pass(
    pair_weights: &[f64],
    design: &Design,
    s: usize,
    src: usize,
    theta: &[Vec<f64>],
    derivatives: bool,
) -> SourcePass {
    let q = design.cols;
    let m = (s - 1) * q;
    let (mut g, mut hf) = if derivatives {
        (vec![0.0; m], vec![0.0; m * m])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut eta = vec![0.0; s];
    let mut pi = vec![0.0; s];
    let mut total = 0.0;
    for (t, slab) in pair_weights.chunks(s * s).enumerate() {
        let w = &slab[src * s..(src + 1) * s];
        let wt: f64 = w.iter().sum();
        if wt == 0.0 {
            continue;
        }
        let x = design.row(t + 1);
        for d in 0..s {
            eta[d] = dot(&theta[d], x);
        }
        let max = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for d in 0..s {
            pi[d] = (eta[d] - max).exp();
            z += pi[d];
        }
        let lse = max + z.ln();
        for d in 0..s {
            pi[d] /= z;
            if w[d] > 0.0 {
                total += w[d] * (eta[d] - lse);
            }
        }
        if !derivatives {
            continue;
        }
        for d in 1..s {
            let r = w[d] - wt * pi[d];
            for (gj, xj) in g[(d - 1) * q..d * q].iter_mut().zip(x) {
                *gj += r * xj;
            }
            for e in 1..=d {
                let c = wt * pi[d] * (if d == e { 1.0 } else { 0.0 } - pi[e]);
                if c == 0.0 {
                    continue;
                }
                for j in 0..q {
                    let cx = c * x[j];
                    let row = &mut hf[((d - 1) * q + j) * m + (e - 1) * q..][..q];
                    for (hc, xk) in row.iter_mut().zip(x) {
                        *hc += cx * xk;
                    }
                }
            }
        }
    }
    if derivatives {
        // Mirror the lower block triangle (d >= e) into the upper one.
        for r in 0..m {
            for c in (r + 1)..m {
                if (c / q) > (r / q) {
                    hf[r * m + c] = hf[c * m + r];
                }
            }
        }
    }
    SourcePass {
        objective: total,
        gradient: g,
        hessian: hf,
    }
}

fn fit_source(pair_weights: &[f64], design: &Design, s: usize, src: usize, init: &[Vec<f64>]) -> (Vec<Vec<f64>>, bool) {
    let q = design.cols;
    let m = (s - 1) * q;
    let mut theta = init.to_vec();
    let mut hit = false;
    let mut pass = source_pass(pair_weights, design, s, src, &theta, true);
    for _ in 0..MAX_ITER {
        let g = DVector::from_column_slice(&pass.gradient);
        if g.norm() <= GRAD_TOL {
            break;
        }
        let h = DMatrix::from_row_slice(m, m, &pass.hessian);
        let Some(step) = solve_psd(&h, &g) else {
            break;
        };
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..40 {
            let mut cand = theta.clone();
            let mut cand_hit = false;
            for d in 1..s {
                for j in 0..q {
                    let v = theta[d][j] + t * step[(d - 1) * q + j];
                    if v.abs() >= COEF_CLAMP {
                        cand_hit = true;
                    }
                    cand[d][j] = v.clamp(-COEF_CLAMP, COEF_CLAMP);
                }
            }
            // Full steps usually succeed, so their derivatives are computed in the same pass.
            let cand_pass = source_pass(pair_weights, design, s, src, &cand, t == 1.0);
            if cand_pass.objective >= pass.objective {
                // Stop once the gain is at rounding level.
                let improved = cand_pass.objective - pass.objective > 1e-12 * pass.objective.abs().max(1.0);
                hit |= cand_hit;
                let cand_pass = if t == 1.0 {
                    cand_pass
                } else {
                    source_pass(pair_weights, design, s, src, &cand, true)
                };
                theta = cand.clone();
                next = improved.then_some((cand, cand_pass));
                break;
            }
            t *= 0.5;
        }
        match next {
            Some((cand, cand_pass)) => {
                theta = cand;
                pass = cand_pass;
            }
            None => break,
        }
    }
    (theta, hit)
}
