//! Hierarchical document identifiers for generative retrieval.
//!
//! The crate builds identifier strings for a document collection under four
//! strategies (random, hierarchical k-means over document vectors,
//! random-hyperplane hashing, and hierarchical k-means over per-document
//! query means), scores indexings by their bottleneck likelihood, and
//! measures the empirical bottleneck plane through a probabilistic prefix
//! retriever.
//!
//! Module map:
//!
//! - [`corpus`]: embedding matrices, documents, queries and their files.
//! - [`clustering`]: flat and hierarchical k-means.
//! - [`indexers`]: the four identifier assignment strategies.
//! - [`ib`]: Gaussian KL, the stationary assignment distribution, the
//!   indexing likelihood and mutual-information estimators.
//! - [`retrieval`]: prefix trie, hierarchical-softmax retriever, beam search.
//! - [`eval`]: Recall@N and MRR@100.
//! - [`synth`]: synthetic Gaussian corpora and exhaustive oracles.
//! - [`verify`]: randomized oracle suites shared by the CLI and the tests.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod ib;
pub mod indexers;
pub mod retrieval;
pub mod seed;
pub mod synth;
pub mod verify;

mod linalg;

pub use error::{Error, Result};
