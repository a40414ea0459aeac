//! Non-homogeneous hidden Markov models with covariate-driven emissions and
//! transitions, fitted by EM inside an adaptive simulated annealing search
//! over covariate inclusion patterns.

pub mod asa;
pub mod data;
pub mod em;
pub mod emissions;
pub mod error;
pub mod eval;
pub mod hmm;
pub mod io;
pub mod linalg;
pub mod model_space;
pub mod par;
pub mod simulate;
pub mod transitions;

pub use error::{Error, Result};
