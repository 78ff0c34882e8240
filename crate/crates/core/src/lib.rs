//! Interpretation pipeline for black-box classifiers on high-dimensional
//! tabular data: train an autoencoder-classifier oracle, probe it with
//! attention and perturbations, distill it into tree surrogates on the top-k
//! feature space, and extract rules, counterfactuals, and attributions with
//! quantitative fidelity and R-squared guarantees.

pub mod attribution;
pub mod blackbox;
pub mod data;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod nn;
pub mod predictor;
pub mod probe;
pub mod rules;
pub mod seeds;
pub mod sensitivity;
pub mod surrogate;

pub use error::{Error, Result};
pub use predictor::Predictor;
