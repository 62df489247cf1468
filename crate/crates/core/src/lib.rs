//! Semantic layer freezing for cheaper finetuning of a toy decoder.
//!
//! Latents of the medium token are compared layer by layer against anchors
//! interpolated between input and output semantic bases. The layer where a
//! batch deviates least becomes its freeze boundary; budget plans then cap
//! how many batches train at each boundary.

pub mod budget;
pub mod error;
pub mod freezing;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod semantics;
pub mod traceio;

pub use error::{Result, SeftError};
