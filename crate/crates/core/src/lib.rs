//! Mutation-based differential testing for neural computation graphs.
//!
//! Seed models are mutated with fourteen structure, input, parameter and
//! weight operators, executed on several backends, and compared layer by
//! layer. Divergences are turned into deduplicated defect reports.

pub mod backends;
pub mod campaign;
pub mod engine;
pub mod error;
pub mod ir;
pub mod operators;
pub mod oracles;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
pub use ir::{GraphModel, LayerKind, LayerNode, RegionTag};
pub use tensor::Tensor;
