//! Distributed representations of multiword relational patterns.
//!
//! The crate covers the full pipeline: corpus ingestion and vocabulary
//! construction, pattern extraction from tagged text, skip-gram training of
//! word and context vectors, six composition encoders that map a pattern's
//! word vectors to a single pattern vector, similarity evaluation, gate
//! inspection, and relation classification on top of the learned vectors.

pub mod corpus;
pub mod embeddings;
pub mod encoders;
pub mod eval;
pub mod hogwild;
pub mod math;
pub mod patterns;
pub mod relclass;
pub mod trainer;

mod error;

pub use error::{Error, Result};
