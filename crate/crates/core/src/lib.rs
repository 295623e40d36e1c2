//! Deterministic evaluation harness for frozen-representation probes in the
//! extreme low-N regime.
//!
//! Embeddings (one row per specimen) are probed with linear and tree-ensemble
//! classifiers under leave-one-out cross-validation. Macro one-vs-rest AUC is
//! the ranking statistic and carries a label-permutation p-value. Two control
//! sources are built in: label-independent Gaussian embeddings and a
//! 14-dimensional handcrafted colour/texture baseline computed from images.
//! A logit-margin diagnostic measures how far paired clean/perturbed
//! embeddings move relative to the eye-clean decision boundary.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod linear;
pub mod metrics;
pub mod perturbation;
pub mod report;
pub mod rng;
pub mod tree;

pub use dataset::{AlignedDataset, ClassId, DatasetManifest, EmbeddingSet, SpecimenRecord};
pub use error::{Error, Result};

/// Number of grading classes (eye-clean, moderate, heavy).
pub const NUM_CLASSES: usize = 3;
