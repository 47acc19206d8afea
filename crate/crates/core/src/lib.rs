//! Provider profiling with direct and indirect standardization.
//!
//! The crate estimates, for every provider in an observational dataset, the
//! directly standardized mean outcome, the observed provider mean, the
//! indirectly standardized (reassigned) mean, and their difference and ratio.
//! Nuisance functions are estimated by cross-fitted stacked learners and then
//! fluctuated along logistic submodels so that the empirical efficient
//! influence function equations hold exactly. Standard errors come from the
//! estimated influence functions.
//!
//! Besides the estimation pipeline the crate carries an exact finite-support
//! oracle ([`oracle`]) and a simulation harness ([`simulation`]).

pub mod dataset;
pub mod eif;
pub mod error;
pub mod learners;
pub mod nuisance;
pub mod oracle;
pub mod rng;
pub mod simulation;
pub mod targeting;

pub use dataset::{Dataset, FoldAssignment, OutcomeKind, OutcomeScale};
pub use error::{Error, Result};
pub use targeting::{Parameter, ProfileEstimates};
