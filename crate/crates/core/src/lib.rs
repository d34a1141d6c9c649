//! Multi-label classification in affine subspaces.
//!
//! Each label owns a pair of parallel affine subspaces in descriptor space.
//! Training pulls every descriptor toward the subspace matching its label
//! value, pushes each pair apart and keeps the subspace normals at unit
//! length. At inference time the projections of the training descriptors
//! feed a Gaussian kernel density estimate per label and class, and the
//! posterior of the two densities is the label probability.
//!
//! The crate contains:
//! - [`head`]: the subspace head, its three loss terms and analytic gradients
//! - [`mlp`] and [`adam`]: a small feature extractor and its optimizer
//! - [`logistic`]: the sigmoid/cross-entropy baseline head
//! - [`inference`]: KDE posterior, distance-ratio and kNN scorers
//! - [`metrics`]: average precision, macro/micro mAP, ROC AUC
//! - [`data`]: synthetic clusters, CSV datasets, splits and class weights
//! - [`trainer`] and [`checkpoint`]: training, evaluation, sweeps and persistence
//! - [`cli`]: the `asmlc` command-line front end

pub mod adam;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod head;
pub mod inference;
pub mod json;
pub mod linalg;
pub mod logistic;
pub mod metrics;
pub mod mlp;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};
