//! Cross-modal alignment toolkit.
//!
//! Trains a small projection head that maps audio embeddings into a
//! CLIP-style visual token space, substitutes the projected vector into
//! visual token grids, and evaluates bidirectional retrieval together with
//! the retrieval/generation trade-off analysis.

pub mod analysis;
pub mod error;
pub mod fusion;
mod io_util;
pub mod projection;
pub mod retrieval;
pub mod rng;
pub mod store;
pub mod substitution;
pub mod training;

pub use error::{Error, Result};
pub use io_util::write_atomic;

/// Width of a CLIP ViT-L/14 token.
pub const CLIP_DIM: usize = 1024;
