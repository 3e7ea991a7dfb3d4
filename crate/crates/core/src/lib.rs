//! Bayesian nonparametric inference of Λ-coalescent measures from
//! time-series genetic data.
//!
//! The crate covers Λ-measures and their merger rates ([`measure`]),
//! truncated moment sequences and their classical moment-problem machinery
//! ([`moments`]), coalescent simulation ([`genealogy`]), exact and
//! importance-sampled likelihoods ([`likelihood`]), the stick-breaking
//! prior ([`prior`]), pseudo-marginal MCMC ([`mcmc`]) and moment-constrained
//! bounds on functionals of Λ ([`bounds`]).

pub mod bounds;
pub mod discrete;
pub mod genealogy;
pub mod importance;
pub mod likelihood;
pub mod error;
pub mod kv;
pub mod mcmc;
pub mod measure;
pub mod moments;
pub mod mutation;
pub mod numeric;
pub mod prior;

pub use discrete::DiscreteMeasure;
pub use error::{Error, Result};
pub use measure::{LambdaMeasure, MergerRates};
pub use moments::MomentSequence;
pub use mutation::MutationModel;
