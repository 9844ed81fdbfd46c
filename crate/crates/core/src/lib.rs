//! Student-teacher contrastive learning with online hard negative pair
//! mining, on a self-contained float64 autodiff core.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`tensor`]: dense tensors, the reverse-mode tape, gradient clipping,
//!   and the finite-difference oracle.
//! - [`augment`]: the deterministic multi-view augmentation pipeline for
//!   images, plus a Gaussian-jitter analogue for vector data.
//! - [`model`]: residual encoders, the student-teacher pair, and the
//!   exponential-moving-average student update.
//! - [`loss`]: normalized-distance dissimilarity, positive/negative
//!   losses, online hard negative mining, and an InfoNCE surrogate kept
//!   as a test oracle.
//! - [`trainer`]: Adam, cosine learning-rate annealing, the training
//!   loop, checkpointing, and metrics.
//! - [`eval`]: linear/k-NN probes and collapse diagnostics.
//! - [`data`]: synthetic cluster datasets, CIFAR binary ingestion, and
//!   deterministic batching.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
