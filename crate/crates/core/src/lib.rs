//! Synthetic-speech detection toolkit: short-term cepstral front ends on
//! mel, inverted and corpus-adaptive frequency scales, a two-class GMM
//! maximum-likelihood back end, and ROC-convex-hull EER evaluation.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod gmm;
pub mod matrix;
pub mod signal;
pub mod warping;

pub use error::{Error, Result};
