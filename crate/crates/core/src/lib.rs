//! EA-GPS: a lightweight graph-based sequential recommender.
//!
//! The model couples a sparse graph convolutional encoder over the user-item
//! interaction graph with an external-attention side channel (two small
//! learnable memory units per head) and a positional-prompt decoder that
//! turns per-sequence item embeddings into next-item predictions.
//!
//! The crate is self-contained: dense f64 tensors, hand-derived backward
//! passes validated by a finite-difference checker, an Adam optimizer, the
//! data pipeline (filtering, fragmenting, splitting, batching), ranking
//! metrics, and a complexity/benchmark harness.
//!
//! Module map:
//! - [`data`] — interaction logs, sequence building, splits, batches, synthetic data
//! - [`graph`] — sparse adjacency construction, symmetric normalization, spmm
//! - [`tensor`], [`random`], [`params`], [`gradcheck`] — the numeric kernel set
//! - [`attention`] — self / linear / external attention and FLOP accounting
//! - [`encoder`] — layer-wise propagation, residual fusion, layer combination
//! - [`decoder`] — prompt projection, templates, sequential masking, soft attention
//! - [`model`], [`trainer`] — variant wiring, loss, training loop, checkpoints
//! - [`metrics`], [`bench`] — Recall/MRR, parameter accounting, scaling benchmarks

pub mod attention;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod random;
pub mod seeds;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
