//! Covariate-informed Bayesian link prediction for bipartite species
//! interaction meta-networks assembled from heterogeneous studies.
//!
//! The model separates three reasons a pair can be missing from the data:
//! the interaction does not exist, the two species never co-occurred in a
//! study that could have recorded it, or it occurred but went undetected.

pub mod error;
pub mod evalx;
pub mod gibbs;
pub mod model;
pub mod netdata;
pub mod pgrand;
pub mod posterior;
pub mod synth;

pub use error::{Error, Result};
