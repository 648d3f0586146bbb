//! Simulation, stability checks, mixing bounds and maximum-likelihood fitting
//! for autoregressive categorical time series under the multinomial-logit link.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod categorical;
pub mod cli;
pub mod covariates;
pub mod error;
pub mod inference;
pub mod mixing;
pub mod models;
pub mod rng;
pub mod stability;

pub use categorical::{inverse_link, sample_category, softmax_link, CategoryValue, LogOdds, ProbabilityVector};
pub use error::{Error, Result};
pub use models::{ModelSpec, SeriesPath};
