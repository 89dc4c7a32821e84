//! Collapsed Gibbs sampling for LDA where workers own disjoint data
//! partitions and rotate disjoint vocabulary blocks of the word-topic model
//! through a sharded key-value store.

pub mod codec;
pub mod config;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod kvstore;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod synthetic;

pub use error::{Error, Result};
