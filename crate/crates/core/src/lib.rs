//! Uncertainty fine-tuning for binary risk prediction over frozen embeddings.
//!
//! A multi-head MLP classifier is trained with a class-weighted base loss plus
//! two calibration terms: an individual term that aligns the normalized
//! entropy of each prediction with its error, and a cohort term that pulls
//! predictions toward the event rate of the sample's cosine k-nearest
//! neighbors, weighted by how mixed that neighborhood is.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: embedding datasets, synthetic cohorts, CSV, stratified folds
//! - [`neighbors`]: exact cosine kNN and cohort statistics
//! - [`objective`]: loss terms, gradients and the soft-label identity
//! - [`multihead`]: the classifier, its training loop and gradient checks
//! - [`baselines`]: internal baseline, MC Dropout and Deep Ensembles
//! - [`metrics`]: discrimination, calibration and triage metrics
//! - [`pipeline`]: run configs, experiment grids and artifact writers
//! - [`cli`]: the `cura` command-line front end

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod io;
pub mod metrics;
pub mod multihead;
pub mod neighbors;
pub mod objective;
pub mod pipeline;
pub mod seed;

pub use error::{Error, Result};
