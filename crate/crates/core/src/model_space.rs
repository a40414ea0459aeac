//! Model configurations, the neighbourhood proposal and the conjugate
//! adaptive samplers that tune the search while it runs.
//!
//! Four samplers draw the search hyperparameters from posterior predictive
//! distributions fed by "synthetic data": values recorded on successful
//! search steps.
//!
//! * EM iterations `l` and moves per temperature `K`: Gamma-Poisson, giving a
//!   negative-binomial predictive with size `a + sum(D)` and rate `b + |D|`.
//! * Neighbourhood size `c`: Beta-Binomial over `C` trials.
//! * Inclusion pattern of covariate `j`: Dirichlet-Multinomial over the four
//!   `(gamma_j, delta_j)` categories.

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inclusion indicators: `gamma` for the emission predictor, `delta` for the transitions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ModelConfig {
    pub gamma: Vec<bool>,
    pub delta: Vec<bool>,
}

impl ModelConfig {
    /// The intercept-only model over `p` covariates.
    pub fn empty(p: usize) -> Self {
        ModelConfig {
            gamma: vec![false; p],
            delta: vec![false; p],
        }
    }

    pub fn full(p: usize) -> Self {
        ModelConfig {
            gamma: vec![true; p],
            delta: vec![true; p],
        }
    }

    pub fn len(&self) -> usize {
        self.gamma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty()
    }

    pub fn n_gamma(&self) -> usize {
        self.gamma.iter().filter(|&&b| b).count()
    }

    pub fn n_delta(&self) -> usize {
        self.delta.iter().filter(|&&b| b).count()
    }

    pub fn psi(&self, j: usize) -> Psi {
        Psi::from_pair(self.gamma[j], self.delta[j])
    }

    pub fn set_psi(&mut self, j: usize, psi: Psi) {
        let (g, d) = psi.pair();
        self.gamma[j] = g;
        self.delta[j] = d;
    }

    /// Parse two equal-length bit strings, e.g. `("0110", "1000")`.
    pub fn from_bits(gamma: &str, delta: &str) -> Result<Self> {
        let parse = |s: &str| -> Result<Vec<bool>> {
            s.chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::config(format!("invalid indicator {other:?} in {s:?}"))),
                })
                .collect()
        };
        let (gamma, delta) = (parse(gamma)?, parse(delta)?);
        if gamma.len() != delta.len() {
            return Err(Error::config("gamma and delta indicator strings differ in length"));
        }
        Ok(ModelConfig { gamma, delta })
    }

    pub fn gamma_bits(&self) -> String {
        bits(&self.gamma)
    }

    pub fn delta_bits(&self) -> String {
        bits(&self.delta)
    }

    /// Dense index in `0..4^p` (covariate 0 is the least significant digit).
    pub fn index(&self) -> usize {
        (0..self.len()).rev().fold(0, |acc, j| acc * 4 + self.psi(j) as usize)
    }

    pub fn from_index(mut idx: usize, p: usize) -> Self {
        let mut m = ModelConfig::empty(p);
        for j in 0..p {
            m.set_psi(j, Psi::ALL[idx % 4]);
            idx /= 4;
        }
        m
    }
}

fn bits(v: &[bool]) -> String {
    v.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

impl std::fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "gamma={} delta={}", self.gamma_bits(), self.delta_bits())
    }
}

#[derive(Serialize, Deserialize)]
struct ConfigRepr {
    gamma: String,
    delta: String,
}

impl Serialize for ModelConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ConfigRepr {
            gamma: self.gamma_bits(),
            delta: self.delta_bits(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ModelConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ConfigRepr::deserialize(d)?;
        ModelConfig::from_bits(&r.gamma, &r.delta).map_err(serde::de::Error::custom)
    }
}

/// One covariate's inclusion pattern `(gamma_j, delta_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Psi {
    Neither = 0,
    Emission = 1,
    Transition = 2,
    Both = 3,
}

impl Psi {
    pub const ALL: [Psi; 4] = [Psi::Neither, Psi::Emission, Psi::Transition, Psi::Both];

    pub fn from_pair(gamma: bool, delta: bool) -> Self {
        match (gamma, delta) {
            (false, false) => Psi::Neither,
            (true, false) => Psi::Emission,
            (false, true) => Psi::Transition,
            (true, true) => Psi::Both,
        }
    }

    pub fn pair(self) -> (bool, bool) {
        match self {
            Psi::Neither => (false, false),
            Psi::Emission => (true, false),
            Psi::Transition => (false, true),
            Psi::Both => (true, true),
        }
    }
}

/// What a successful step appends to the inclusion-pattern store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiRecord {
    /// Only the covariates resampled by the accepted proposal.
    #[default]
    Touched,
    /// Every covariate of the accepted configuration.
    Full,
}

/// Prior hyperparameters of the adaptive samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptivePriors {
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_mu: f64,
    pub b_mu: f64,
    pub a_c: f64,
    pub b_c: f64,
    pub zeta: [f64; 4],
    /// Trial count `C` of the neighbourhood-size Beta-Binomial.
    pub cap: usize,
    /// Probability that a proposal draws a covariate's pattern uniformly
    /// instead of from the adaptive posterior. Zero gives the pure posterior.
    pub psi_exploration: f64,
    pub psi_record: PsiRecord,
}

impl AdaptivePriors {
    pub fn validate(&self) -> Result<()> {
        let all = [self.a_lambda, self.b_lambda, self.a_mu, self.b_mu, self.a_c, self.b_c];
        if all.iter().chain(&self.zeta).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::config("adaptive prior hyperparameters must be finite and non-negative"));
        }
        if self.cap == 0 {
            return Err(Error::config("neighbourhood cap C must be at least 1"));
        }
        if self.zeta.iter().sum::<f64>() <= 0.0 {
            return Err(Error::config("Dirichlet prior zeta has no positive weight"));
        }
        if self.a_c + self.b_c <= 0.0 {
            return Err(Error::config("a_c + b_c must be positive"));
        }
        if !(0.0..=1.0).contains(&self.psi_exploration) {
            return Err(Error::config("psi_exploration must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Synthetic-data stores plus priors. One per search chain, never shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub priors: AdaptivePriors,
    pub d_l: Vec<u64>,
    pub d_k: Vec<u64>,
    pub d_c: Vec<u64>,
    /// Per covariate: how often each `Psi` category was recorded.
    pub d_psi: Vec<[u64; 4]>,
}

/// Shape/rate of a Gamma posterior and the matching negative-binomial predictive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaPoisson {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPoisson {
    /// Per-trial probability of the counted event in the failure-count convention,
    /// i.e. `1 / (1 + rate)`.
    pub fn nb_prob(&self) -> f64 {
        1.0 / (1.0 + self.rate)
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.shape <= 0.0 {
            return 1;
        }
        let lambda = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("gamma parameters validated")
            .sample(rng);
        if !(lambda > 0.0) {
            return 1;
        }
        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(rng);
        (k as u64).max(1)
    }
}

/// Beta posterior parameters of the neighbourhood-size sampler.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaBinomial {
    pub trials: u64,
    pub alpha: f64,
    pub beta: f64,
}

impl AdaptiveState {
    pub fn new(priors: AdaptivePriors, p: usize) -> Result<Self> {
        priors.validate()?;
        Ok(AdaptiveState {
            priors,
            d_l: Vec::new(),
            d_k: Vec::new(),
            d_c: Vec::new(),
            d_psi: vec![[0; 4]; p],
        })
    }

    fn gamma_poisson(a: f64, b: f64, store: &[u64]) -> GammaPoisson {
        GammaPoisson {
            shape: a + store.iter().sum::<u64>() as f64,
            rate: b + store.len() as f64,
        }
    }

    pub fn l_posterior(&self) -> GammaPoisson {
        Self::gamma_poisson(self.priors.a_lambda, self.priors.b_lambda, &self.d_l)
    }

    pub fn k_posterior(&self) -> GammaPoisson {
        Self::gamma_poisson(self.priors.a_mu, self.priors.b_mu, &self.d_k)
    }

    pub fn c_posterior(&self) -> BetaBinomial {
        let sum = self.d_c.iter().sum::<u64>() as f64;
        let cap = self.priors.cap as f64;
        BetaBinomial {
            trials: self.priors.cap as u64,
            alpha: self.priors.a_c + sum,
            beta: self.priors.b_c + cap * self.d_c.len() as f64 - sum,
        }
    }

    /// Unnormalised category weights `zeta + counts` for covariate `j`.
    pub fn psi_weights(&self, j: usize) -> [f64; 4] {
        let mut w = self.priors.zeta;
        for (wk, ck) in w.iter_mut().zip(&self.d_psi[j]) {
            *wk += *ck as f64;
        }
        w
    }

    /// Number of EM iterations; at least 1.
    pub fn sample_l<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        let post = self.l_posterior();
        check_gamma(post, "l")?;
        Ok(post.draw(rng))
    }

    /// Moves per temperature; at least 1.
    pub fn sample_k<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<u64> {
        let post = self.k_posterior();
        check_gamma(post, "K")?;
        Ok(post.draw(rng))
    }

    /// Neighbourhood size in `1..=C`.
    pub fn sample_c<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let post = self.c_posterior();
        let prob = if post.alpha <= 0.0 {
            0.0
        } else if post.beta <= 0.0 {
            1.0
        } else {
            Beta::new(post.alpha, post.beta).expect("positive beta parameters").sample(rng)
        };
        let c = Binomial::new(post.trials, prob.clamp(0.0, 1.0))
            .expect("valid binomial")
            .sample(rng);
        c.max(1)
    }

    /// Inclusion pattern of covariate `j` from the Dirichlet-Multinomial predictive.
    pub fn sample_psi<R: Rng + ?Sized>(&self, j: usize, rng: &mut R) -> Psi {
        draw_category(&self.psi_weights(j), rng)
    }

    /// A whole configuration with every covariate drawn from its predictive.
    pub fn sample_config<R: Rng + ?Sized>(&self, rng: &mut R) -> ModelConfig {
        let p = self.d_psi.len();
        let mut m = ModelConfig::empty(p);
        for j in 0..p {
            m.set_psi(j, self.sample_psi(j, rng));
        }
        m
    }

    /// Append one successful step's hyperparameters to the stores.
    pub fn record_success(&mut self, l: u64, k: u64, c: Option<u64>, psi: &[(usize, Psi)]) {
        self.d_l.push(l);
        self.d_k.push(k);
        if let Some(c) = c {
            self.d_c.push(c.min(self.priors.cap as u64));
        }
        for &(j, cat) in psi {
            self.d_psi[j][cat as usize] += 1;
        }
    }
}

fn check_gamma(post: GammaPoisson, name: &str) -> Result<()> {
    if !(post.rate > 0.0) {
        return Err(Error::config(format!(
            "posterior rate for {name} is zero; set a positive b prior"
        )));
    }
    Ok(())
}

/// Categorical draw proportional to `weights`; zero-weight categories are never drawn.
pub fn draw_category<R: Rng + ?Sized>(weights: &[f64; 4], rng: &mut R) -> Psi {
    let total: f64 = weights.iter().sum();
    let u = rng.random::<f64>() * total;
    let mut cum = 0.0;
    let mut last = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last = k;
        if u < cum {
            return Psi::ALL[k];
        }
    }
    Psi::ALL[last]
}

/// A neighbour of the current configuration and the patterns that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: ModelConfig,
    /// `(covariate, drawn pattern)` for every index in the neighbourhood `J`.
    pub draws: Vec<(usize, Psi)>,
}

/// Resample the inclusion patterns of `c` distinct covariates chosen uniformly.
pub fn propose_neighbor<R: Rng + ?Sized>(
    current: &ModelConfig,
    c: usize,
    state: &AdaptiveState,
    rng: &mut R,
) -> Proposal {
    let p = current.len();
    let c = c.min(p);
    let mut config = current.clone();
    let mut draws = Vec::with_capacity(c);
    if c == 0 {
        return Proposal { config, draws };
    }
    let mut chosen = rand::seq::index::sample(rng, p, c).into_vec();
    chosen.sort_unstable();
    for j in chosen {
        let psi = if state.priors.psi_exploration > 0.0 && rng.random::<f64>() < state.priors.psi_exploration {
            Psi::ALL[rng.random_range(0..4)]
        } else {
            state.sample_psi(j, rng)
        };
        config.set_psi(j, psi);
        draws.push((j, psi));
    }
    Proposal { config, draws }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn priors(zeta: [f64; 4], cap: usize) -> AdaptivePriors {
        AdaptivePriors {
            a_lambda: 150.0,
            b_lambda: 5.0,
            a_mu: 25.0,
            b_mu: 2.0,
            a_c: 5.0,
            b_c: 15.0,
            zeta,
            cap,
            psi_exploration: 0.0,
            psi_record: PsiRecord::Touched,
        }
    }

    #[test]
    fn config_index_round_trip() {
        for idx in 0..64 {
            assert_eq!(ModelConfig::from_index(idx, 3).index(), idx);
        }
        let m = ModelConfig::from_bits("101", "011").unwrap();
        assert_eq!(m.psi(0), Psi::Emission);
        assert_eq!(m.psi(1), Psi::Transition);
        assert_eq!(m.psi(2), Psi::Both);
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, r#"{"gamma":"101","delta":"011"}"#);
        assert_eq!(serde_json::from_str::<ModelConfig>(&json).unwrap(), m);
    }

    #[test]
    fn flat_prior_gamma_posterior() {
        let mut p = priors([1.0; 4], 3);
        p.a_lambda = 0.0;
        p.b_lambda = 0.0;
        let mut st = AdaptiveState::new(p, 3).unwrap();
        st.d_l = vec![3, 3, 3];
        let post = st.l_posterior();
        assert_eq!((post.shape, post.rate), (9.0, 3.0));
        assert_eq!(post.mean(), 3.0);
    }

    #[test]
    fn records_shift_posteriors_additively() {
        let mut st = AdaptiveState::new(priors([0.0, 0.0, 0.0, 1.0], 4), 4).unwrap();
        let (l0, k0, c0) = (st.l_posterior(), st.k_posterior(), st.c_posterior());
        st.record_success(7, 3, Some(2), &[(1, Psi::Neither)]);
        let (l1, k1, c1) = (st.l_posterior(), st.k_posterior(), st.c_posterior());
        assert_eq!((l1.shape - l0.shape, l1.rate - l0.rate), (7.0, 1.0));
        assert_eq!((k1.shape - k0.shape, k1.rate - k0.rate), (3.0, 1.0));
        assert_eq!((c1.alpha - c0.alpha, c1.beta - c0.beta), (2.0, 2.0));
        st.record_success(7, 3, Some(2), &[(1, Psi::Neither)]);
        let l2 = st.l_posterior();
        assert_eq!((l2.shape - l0.shape, l2.rate - l0.rate), (14.0, 2.0));
        assert_eq!(st.psi_weights(1), [2.0, 0.0, 0.0, 1.0]);
        assert_eq!((st.d_l.len(), st.d_k.len(), st.d_c.len()), (2, 2, 2));
    }

    #[test]
    fn forced_full_model_category() {
        let st = AdaptiveState::new(priors([0.0, 0.0, 0.0, 1.0], 5), 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            assert_eq!(st.sample_psi(2, &mut rng), Psi::Both);
        }
        let cur = ModelConfig::empty(5);
        let prop = propose_neighbor(&cur, 5, &st, &mut rng);
        assert_eq!(prop.config, ModelConfig::full(5));
        assert_eq!(st.sample_config(&mut rng), ModelConfig::full(5));
    }

    #[test]
    fn single_coordinate_neighbourhood() {
        let st = AdaptiveState::new(priors([1.0; 4], 6), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cur = ModelConfig::from_bits("101010", "110011").unwrap();
        for _ in 0..500 {
            let prop = propose_neighbor(&cur, 1, &st, &mut rng);
            let changed = (0..6).filter(|&j| prop.config.psi(j) != cur.psi(j)).count();
            assert!(changed <= 1);
            assert_eq!(prop.draws.len(), 1);
            let j = prop.draws[0].0;
            for i in (0..6).filter(|&i| i != j) {
                assert_eq!(prop.config.psi(i), cur.psi(i));
            }
        }
    }

    #[test]
    fn sampler_ranges() {
        let st = AdaptiveState::new(priors([1.0; 4], 3), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            assert!(st.sample_l(&mut rng).unwrap() >= 1);
            assert!(st.sample_k(&mut rng).unwrap() >= 1);
            let c = st.sample_c(&mut rng);
            assert!((1..=3).contains(&c));
        }
    }

    #[test]
    fn invalid_priors_rejected() {
        assert!(AdaptiveState::new(priors([0.0; 4], 3), 3).is_err());
        assert!(AdaptiveState::new(priors([1.0; 4], 0), 3).is_err());
        let mut p = priors([1.0; 4], 3);
        p.b_lambda = 0.0;
        let st = AdaptiveState::new(p, 3).unwrap();
        assert!(st.sample_l(&mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
