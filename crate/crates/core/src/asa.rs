//! Adaptive simulated annealing over model configurations, with EM fits as
//! the inner parameter optimiser.
//!
//! A search chain runs `R` epochs. Each epoch restarts the current solution,
//! walks an exponentially cooled temperature ladder and at every temperature
//! makes `K` neighbourhood moves. During the first `R_a` epochs, successful
//! moves feed the adaptive samplers in [`crate::model_space`]; afterwards the
//! samplers are frozen and the chain is homogeneous.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::em::{init_params, run_em_prepared, EmSettings};
use crate::emissions::Family;
use crate::error::{Error, Result};
use crate::hmm::{Criterion, Nhhmm, Prepared};
use crate::model_space::{propose_neighbor, AdaptivePriors, AdaptiveState, ModelConfig, Psi, PsiRecord};
use crate::par::Execution;

/// Metropolis acceptance probability `min(1, exp((r_current - r_proposal) / tau))`.
pub fn acceptance_probability(r_current: f64, r_proposal: f64, tau: f64) -> f64 {
    if !r_proposal.is_finite() {
        return 0.0;
    }
    if !r_current.is_finite() {
        return 1.0;
    }
    ((r_current - r_proposal) / tau).exp().min(1.0)
}

/// Accept or reject a move; improvements are always accepted.
pub fn acceptance<R: Rng + ?Sized>(r_current: f64, r_proposal: f64, tau: f64, rng: &mut R) -> bool {
    let a = acceptance_probability(r_current, r_proposal, tau);
    if a >= 1.0 {
        return true;
    }
    if a <= 0.0 {
        return false;
    }
    rng.random::<f64>() < a
}

/// How each epoch picks its starting configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpochStart {
    /// Draw a fresh configuration from the inclusion-pattern predictive.
    #[default]
    Redraw,
    /// Continue from the previous epoch's current solution.
    CarryOver,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub tau_max: f64,
    pub tau_min: f64,
    pub kappa: f64,
    pub epochs: usize,
    pub adaptation_epochs: usize,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0 && self.tau_max > self.tau_min && self.tau_max.is_finite()) {
            return Err(Error::config("temperatures must satisfy tau_max > tau_min > 0"));
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::config("cooling rate kappa must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("at least one epoch is required"));
        }
        if self.adaptation_epochs > self.epochs {
            return Err(Error::config("adaptation epochs cannot exceed total epochs"));
        }
        Ok(())
    }

    /// `tau_max * exp(-i * kappa)` for every `i` with the temperature above `tau_min`.
    pub fn ladder(&self) -> Vec<f64> {
        let len = ((self.tau_max / self.tau_min).ln() / self.kappa).ceil().max(1.0) as usize;
        (0..len).map(|i| self.tau_max * (-(i as f64) * self.kappa).exp()).collect()
    }
}

/// Result of scoring one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation<F> {
    /// `+inf` when the fit failed or a state collapsed.
    pub criterion: f64,
    pub fit: Option<F>,
    pub collapsed: bool,
    pub failed: bool,
}

/// Anything that can score a configuration given an EM iteration budget.
pub trait Objective {
    type Fit: Clone;

    fn evaluate(&self, config: &ModelConfig, em_iterations: u64, rng: &mut ChaCha8Rng) -> Result<Evaluation<Self::Fit>>;
}

/// A fitted model and its likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub model: Nhhmm,
    pub loglik: f64,
}

/// Fresh random initialisation plus `l` EM iterations, scored by AIC or BIC.
#[derive(Debug, Clone)]
pub struct EmObjective<'a> {
    pub data: &'a Dataset,
    pub family: Family,
    pub n_states: usize,
    pub criterion: Criterion,
    pub loglik_tolerance: f64,
}

impl Objective for EmObjective<'_> {
    type Fit = EmFit;

    fn evaluate(&self, config: &ModelConfig, em_iterations: u64, rng: &mut ChaCha8Rng) -> Result<Evaluation<EmFit>> {
        let prep = Prepared::new(self.family, config, self.data)?;
        let init = init_params(self.family, config, self.data, self.n_states, rng)?.model;
        let settings = EmSettings {
            iterations: em_iterations.max(1) as usize,
            loglik_tolerance: self.loglik_tolerance,
            restarts: 0,
        };
        match run_em_prepared(init, &prep, &settings) {
            Ok(res) => {
                let collapsed = res.is_collapsed();
                let criterion = if collapsed {
                    f64::INFINITY
                } else {
                    self.criterion
                        .value(res.loglik, res.model.free_parameters(), self.data.len())
                };
                Ok(Evaluation {
                    criterion,
                    fit: Some(EmFit {
                        model: res.model,
                        loglik: res.loglik,
                    }),
                    collapsed,
                    failed: false,
                })
            }
            Err(Error::Numerical { .. } | Error::ImpossibleObservation(_)) => Ok(Evaluation {
                criterion: f64::INFINITY,
                fit: None,
                collapsed: false,
                failed: true,
            }),
            Err(e) => Err(e),
        }
    }
}

/// Precomputed criterion per configuration index (see [`ModelConfig::index`]).
#[derive(Debug, Clone)]
pub struct TableObjective {
    pub values: Vec<f64>,
}

impl Objective for TableObjective {
    type Fit = ();

    fn evaluate(&self, config: &ModelConfig, _em_iterations: u64, _rng: &mut ChaCha8Rng) -> Result<Evaluation<()>> {
        let criterion = self.values[config.index()];
        Ok(Evaluation {
            criterion,
            fit: Some(()),
            collapsed: false,
            failed: !criterion.is_finite(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub epoch: usize,
    pub temperature: f64,
    pub proposal: ModelConfig,
    pub accepted: bool,
    pub criterion: f64,
    pub em_iterations: u64,
    pub moves: u64,
    pub neighbourhood: u64,
    pub global_best: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub evaluations: usize,
    pub collapsed: usize,
    pub failed: usize,
    pub successes: usize,
}

/// Current or best solution of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<F> {
    pub config: ModelConfig,
    pub fit: Option<F>,
    pub criterion: f64,
}

/// What one step of the chain did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub proposal: ModelConfig,
    pub criterion: f64,
    pub accepted: bool,
    pub success: bool,
    pub em_iterations: u64,
    pub neighbourhood: u64,
}

/// The annealing kernel: current/best solutions, adaptive state, visit table.
#[derive(Debug, Clone)]
pub struct Chain<F> {
    pub current: Solution<F>,
    pub best: Solution<F>,
    pub adaptive: AdaptiveState,
    pub adapting: bool,
    pub visits: BTreeMap<ModelConfig, f64>,
    pub diagnostics: Diagnostics,
}

impl<F: Clone> Chain<F> {
    /// Start a chain from an already evaluated configuration.
    pub fn new(start: Solution<F>, adaptive: AdaptiveState) -> Self {
        let mut visits = BTreeMap::new();
        visits.insert(start.config.clone(), start.criterion);
        Chain {
            best: start.clone(),
            current: start,
            adaptive,
            adapting: false,
            visits,
            diagnostics: Diagnostics::default(),
        }
    }

    fn note_visit(&mut self, config: &ModelConfig, criterion: f64) {
        let slot = self.visits.entry(config.clone()).or_insert(f64::INFINITY);
        if criterion < *slot {
            *slot = criterion;
        }
    }

    fn note_eval<G>(&mut self, eval: &Evaluation<G>) {
        self.diagnostics.evaluations += 1;
        self.diagnostics.collapsed += usize::from(eval.collapsed);
        self.diagnostics.failed += usize::from(eval.failed);
    }

    /// Replace the current solution (epoch restart). Updates the best if improved.
    pub fn restart(&mut self, start: Solution<F>) {
        self.note_visit(&start.config, start.criterion);
        if start.criterion < self.best.criterion {
            self.best = start.clone();
        }
        self.current = start;
    }

    /// One proposal/evaluation/acceptance step at temperature `tau`, with `moves`
    /// the `K` drawn for this temperature.
    pub fn step<O: Objective<Fit = F>>(
        &mut self,
        objective: &O,
        tau: f64,
        moves: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<StepOutcome> {
        let p = self.current.config.len();
        let c = if p == 0 {
            0
        } else {
            self.adaptive.sample_c(rng).min(p as u64)
        };
        let proposal = propose_neighbor(&self.current.config, c as usize, &self.adaptive, rng);
        let l = self.adaptive.sample_l(rng)?;
        let eval = objective.evaluate(&proposal.config, l, rng)?;
        self.note_eval(&eval);
        self.note_visit(&proposal.config, eval.criterion);

        let accepted = acceptance(self.current.criterion, eval.criterion, tau, rng);
        let mut success = false;
        if accepted {
            self.current = Solution {
                config: proposal.config.clone(),
                fit: eval.fit.clone(),
                criterion: eval.criterion,
            };
            if tau < 1.0 {
                success = true;
            }
            if eval.criterion < self.best.criterion {
                self.best = self.current.clone();
                success = true;
            }
        }
        // Both success conditions in one step append a single record.
        let success = success && self.adapting;
        if success {
            self.diagnostics.successes += 1;
            let psi: Vec<(usize, Psi)> = match self.adaptive.priors.psi_record {
                PsiRecord::Touched => proposal.draws.clone(),
                PsiRecord::Full => (0..p).map(|j| (j, proposal.config.psi(j))).collect(),
            };
            let c_rec = (p > 0).then_some(c);
            self.adaptive.record_success(l, moves, c_rec, &psi);
        }
        Ok(StepOutcome {
            proposal: proposal.config,
            criterion: eval.criterion,
            accepted,
            success,
            em_iterations: l,
            neighbourhood: c,
        })
    }
}

/// Full output of one search chain.
#[derive(Debug, Clone)]
pub struct SearchRecord<F> {
    pub best: Solution<F>,
    pub visits: BTreeMap<ModelConfig, f64>,
    pub trace: Vec<TraceRecord>,
    pub diagnostics: Diagnostics,
    /// Adaptive state at the end of every epoch.
    pub adaptive_by_epoch: Vec<AdaptiveState>,
}

fn start_solution<O: Objective>(
    objective: &O,
    adaptive: &AdaptiveState,
    carry: Option<&Solution<O::Fit>>,
    rng: &mut ChaCha8Rng,
) -> Result<(Solution<O::Fit>, Evaluation<O::Fit>)> {
    let config = match carry {
        Some(sol) => sol.config.clone(),
        None => adaptive.sample_config(rng),
    };
    let l = adaptive.sample_l(rng)?;
    let eval = objective.evaluate(&config, l, rng)?;
    Ok((
        Solution {
            config,
            fit: eval.fit.clone(),
            criterion: eval.criterion,
        },
        eval,
    ))
}

/// Run one adaptive annealing chain against an arbitrary objective.
pub fn run_search<O: Objective>(
    objective: &O,
    schedule: &Schedule,
    adaptive: AdaptiveState,
    epoch_start: EpochStart,
    rng: &mut ChaCha8Rng,
) -> Result<SearchRecord<O::Fit>> {
    schedule.validate()?;
    let ladder = schedule.ladder();
    let (start, eval) = start_solution(objective, &adaptive, None, rng)?;
    let mut chain = Chain::new(start, adaptive);
    chain.note_eval(&eval);
    let mut trace = Vec::new();
    let mut adaptive_by_epoch = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        chain.adapting = epoch < schedule.adaptation_epochs;
        if epoch > 0 {
            let carry = (epoch_start == EpochStart::CarryOver).then(|| chain.current.clone());
            let (start, eval) = start_solution(objective, &chain.adaptive, carry.as_ref(), rng)?;
            chain.note_eval(&eval);
            chain.restart(start);
        }
        for &tau in &ladder {
            let moves = chain.adaptive.sample_k(rng)?;
            for _ in 0..moves {
                let out = chain.step(objective, tau, moves, rng)?;
                trace.push(TraceRecord {
                    epoch,
                    temperature: tau,
                    proposal: out.proposal,
                    accepted: out.accepted,
                    criterion: out.criterion,
                    em_iterations: out.em_iterations,
                    moves,
                    neighbourhood: out.neighbourhood,
                    global_best: chain.best.criterion,
                });
            }
        }
        adaptive_by_epoch.push(chain.adaptive.clone());
    }
    Ok(SearchRecord {
        best: chain.best,
        visits: chain.visits,
        trace,
        diagnostics: chain.diagnostics,
        adaptive_by_epoch,
    })
}

/// One chain of the EM-backed search.
#[allow(clippy::too_many_arguments)]
pub fn run_thread(
    data: &Dataset,
    family: Family,
    n_states: usize,
    schedule: &Schedule,
    adaptive: AdaptiveState,
    criterion: Criterion,
    epoch_start: EpochStart,
    rng: &mut ChaCha8Rng,
) -> Result<SearchRecord<EmFit>> {
    if adaptive.d_psi.len() != data.n_covariates() {
        return Err(Error::config("adaptive state covers a different number of covariates"));
    }
    let objective = EmObjective {
        data,
        family,
        n_states,
        criterion,
        loglik_tolerance: 1e-8,
    };
    run_search(&objective, schedule, adaptive, epoch_start, rng)
}

/// Interval for a per-thread uniform draw; `lo == hi` is a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn fixed(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    pub const fn uniform(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    /// Always consumes one uniform so the stream layout does not depend on the ranges.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.lo == self.hi {
            s.serialize_f64(self.lo)
        } else {
            [self.lo, self.hi].serialize(s)
        }
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            One(f64),
            Two([f64; 2]),
        }
        match Repr::deserialize(d)? {
            Repr::One(v) => Ok(Interval::fixed(v)),
            Repr::Two([lo, hi]) if lo <= hi => Ok(Interval { lo, hi }),
            Repr::Two(_) => Err(serde::de::Error::custom("interval lower bound exceeds upper bound")),
        }
    }
}

impl std::str::FromStr for Interval {
    type Err = Error;

    /// `"5"` or `"1:10"`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("invalid number {t:?} in interval {s:?}")))
        };
        match s.split_once(':') {
            None => Ok(Interval::fixed(num(s)?)),
            Some((a, b)) => {
                let (lo, hi) = (num(a)?, num(b)?);
                if lo > hi {
                    return Err(Error::config(format!("interval {s:?} is reversed")));
                }
                Ok(Interval { lo, hi })
            }
        }
    }
}

/// Per-thread hyperparameter distributions. Defaults follow the reference setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperRanges {
    pub a_lambda: Interval,
    pub b_lambda: Interval,
    pub a_mu: Interval,
    pub b_mu: Interval,
    pub a_c: Interval,
    pub b_c: Interval,
    pub zeta: [f64; 4],
    pub tau_min: Interval,
    pub tau_max: Interval,
    pub kappa: Interval,
    pub epochs: usize,
    pub adaptation_epochs: usize,
    /// Neighbourhood cap `C`; `None` means the covariate count.
    pub cap: Option<usize>,
    pub psi_exploration: f64,
    pub psi_record: PsiRecord,
    pub epoch_start: EpochStart,
}

impl Default for HyperRanges {
    fn default() -> Self {
        HyperRanges {
            a_lambda: Interval::uniform(100.0, 200.0),
            b_lambda: Interval::uniform(1.0, 10.0),
            a_mu: Interval::uniform(15.0, 35.0),
            b_mu: Interval::fixed(2.0),
            a_c: Interval::fixed(5.0),
            b_c: Interval::fixed(15.0),
            zeta: [0.0, 0.0, 0.0, 1.0],
            tau_min: Interval::uniform(5e-7, 5e-2),
            tau_max: Interval::uniform(2e4, 2e9),
            kappa: Interval::uniform(2.0, 6.0),
            epochs: 4,
            adaptation_epochs: 3,
            cap: None,
            psi_exploration: DEFAULT_PSI_EXPLORATION,
            psi_record: PsiRecord::Touched,
            epoch_start: EpochStart::Redraw,
        }
    }
}

pub const DEFAULT_PSI_EXPLORATION: f64 = 0.5;

/// Hyperparameters actually drawn for one thread.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadHyper {
    pub n_states: usize,
    pub priors: AdaptivePriors,
    pub schedule: Schedule,
    pub epoch_start: EpochStart,
}

impl HyperRanges {
    pub fn draw<R: Rng + ?Sized>(&self, p: usize, state_choices: &[usize], rng: &mut R) -> Result<ThreadHyper> {
        if state_choices.is_empty() {
            return Err(Error::config("no hidden-state counts to choose from"));
        }
        let n_states = state_choices[rng.random_range(0..state_choices.len())];
        let priors = AdaptivePriors {
            a_lambda: self.a_lambda.draw(rng),
            b_lambda: self.b_lambda.draw(rng),
            a_mu: self.a_mu.draw(rng),
            b_mu: self.b_mu.draw(rng),
            a_c: self.a_c.draw(rng),
            b_c: self.b_c.draw(rng),
            zeta: self.zeta,
            cap: self.cap.unwrap_or(p).max(1),
            psi_exploration: self.psi_exploration,
            psi_record: self.psi_record,
        };
        let schedule = Schedule {
            tau_min: self.tau_min.draw(rng),
            tau_max: self.tau_max.draw(rng),
            kappa: self.kappa.draw(rng),
            epochs: self.epochs,
            adaptation_epochs: self.adaptation_epochs,
        };
        priors.validate()?;
        schedule.validate()?;
        Ok(ThreadHyper {
            n_states,
            priors,
            schedule,
            epoch_start: self.epoch_start,
        })
    }
}

/// Random stream of thread `index`: the master seed with the thread index as stream id.
pub fn thread_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

#[derive(Debug, Clone)]
pub struct ThreadOutcome {
    pub index: usize,
    pub hyper: Option<ThreadHyper>,
    pub result: std::result::Result<SearchRecord<EmFit>, String>,
}

#[derive(Debug, Clone)]
pub struct ParallelResult {
    pub threads: Vec<ThreadOutcome>,
    /// Thread holding the criterion-minimal solution.
    pub best_thread: Option<usize>,
}

impl ParallelResult {
    pub fn best(&self) -> Option<&SearchRecord<EmFit>> {
        self.best_thread
            .and_then(|i| self.threads[i].result.as_ref().ok())
    }
}

#[derive(Debug, Clone)]
pub struct ParallelSettings {
    pub family: Family,
    pub state_choices: Vec<usize>,
    pub n_threads: usize,
    pub ranges: HyperRanges,
    pub criterion: Criterion,
    pub master_seed: u64,
    pub execution: Execution,
}

/// Independent chains, each with its own drawn hyperparameters and stream.
pub fn run_parallel(data: &Dataset, settings: &ParallelSettings) -> Result<ParallelResult> {
    if settings.n_threads == 0 {
        return Err(Error::config("at least one search thread is required"));
    }
    let p = data.n_covariates();
    let threads = settings.execution.map(settings.n_threads, |index| {
        let mut rng = thread_rng(settings.master_seed, index);
        let hyper = match settings.ranges.draw(p, &settings.state_choices, &mut rng) {
            Ok(h) => h,
            Err(e) => {
                return ThreadOutcome {
                    index,
                    hyper: None,
                    result: Err(e.to_string()),
                }
            }
        };
        let result = AdaptiveState::new(hyper.priors.clone(), p).and_then(|adaptive| {
            run_thread(
                data,
                settings.family,
                hyper.n_states,
                &hyper.schedule,
                adaptive,
                settings.criterion,
                hyper.epoch_start,
                &mut rng,
            )
        });
        ThreadOutcome {
            index,
            hyper: Some(hyper),
            result: result.map_err(|e| format!("thread {index}: {e}")),
        }
    });
    let best_thread = threads
        .iter()
        .filter_map(|t| t.result.as_ref().ok().map(|r| (t.index, r.best.criterion)))
        .filter(|(_, c)| c.is_finite())
        .fold(None::<(usize, f64)>, |acc, (i, c)| match acc {
            Some((_, bc)) if bc <= c => acc,
            _ => Some((i, c)),
        })
        .map(|(i, _)| i);
    Ok(ParallelResult { threads, best_thread })
}
