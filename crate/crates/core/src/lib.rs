//! Recommendation by weighted expected utility.
//!
//! Items are scored for a user as a sum over discrete rating outcomes of a
//! gain/loss-asymmetric utility times a personalized weighting of each
//! outcome's empirical probability. Parameters are learned by SGD on a
//! discrete-choice log-likelihood with sampled alternatives. CF-LFM and BPR
//! baselines and a sampled-negatives top-K evaluation harness share the same
//! data pipeline.

pub mod analysis;
pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod ingest;
pub mod probability;
pub mod rng;
pub mod scorer;
pub mod training;
pub mod utility;

pub use error::{Error, Result};
