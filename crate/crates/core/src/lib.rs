//! Matching image URLs to reference captions.
//!
//! The pipeline cleans URLs into text, embeds them alongside image vectors,
//! trains a small two-tower model to propose caption candidates, re-ranks the
//! candidates with a pairwise scorer, and optionally enforces a one-to-one
//! assignment across queries.

pub mod assign;
pub(crate) mod binio;
pub mod data;
pub mod embed;
pub mod error;
pub mod eval;
pub mod hashing;
pub mod linalg;
pub mod mcprop;
pub mod optim;
pub mod pipeline;
pub mod rerank;
pub mod retrieval;
pub mod synthetic;

pub use error::{Error, Result};
