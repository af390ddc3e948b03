//! Knowledge-graph enhanced zero-shot semantic communication.
//!
//! The pipeline builds a semantic knowledge base from commonsense triples and
//! word vectors, learns category embeddings with a graph convolutional
//! network, trains a semantic/channel codec over a simulated noisy channel,
//! and classifies received semantics over both seen and unseen categories.

pub mod channel;
pub mod cli;
pub mod codec;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod kg;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
