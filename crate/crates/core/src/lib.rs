#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

//! Federated differentially private estimation for the Cox proportional
//! hazards model: coefficients by noisy batched gradient ascent and the
//! cumulative baseline hazard by a private tree-based Breslow estimator.

pub mod breslow;
pub mod cox;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod federation;
pub mod io;
pub mod privacy;
pub mod rng;
pub mod survival;

pub use error::{Error, Result};
pub use privacy::PrivacyBudget;
pub use survival::{Dataset, ModelBounds, SurvivalRecord};

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T: Send, U: Send>(items: Vec<T>, f: impl Fn(T) -> U + Sync + Send) -> Vec<U> {
    use rayon::prelude::*;
    items.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U>(items: Vec<T>, f: impl Fn(T) -> U) -> Vec<U> {
    items.into_iter().map(f).collect()
}
