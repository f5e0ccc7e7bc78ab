//! Rank-slot ability model for racket-sport match margins with a home
//! advantage term.
//!
//! The crate covers the whole pipeline: ingesting match records
//! ([`data`]), the two hierarchical model variants and their log density
//! ([`model`]), a NUTS sampler with convergence diagnostics ([`sampler`]),
//! posterior summaries ([`posterior`]), predictive intervals and win
//! probabilities ([`predict`]), and a synthetic data generator with a
//! closed-form Gaussian oracle ([`synth`]).

pub mod data;
pub mod error;
pub mod model;
pub mod posterior;
pub mod predict;
pub mod sampler;
pub mod stats;
pub mod synth;

pub use data::{CountryCode, EncodedDataset, EncodedMatch, MatchFormat, MatchRecord, Provenance, Termination, Tour};
pub use error::{Error, Result};
pub use model::{HierarchicalPosterior, LogDensityResult, ModelSpec, ModelVariant, ParameterVector};
pub use posterior::ParameterSummary;
pub use predict::{MatchupQuery, PredictiveSummary};
pub use sampler::{Diagnostics, LogDensity, PosteriorDraws, SamplerConfig};
pub use synth::{OracleResult, TrueParams};
