//! Mutation-based dependency inference for opaque native functions and the
//! taint-analysis machinery built on top of it.
//!
//! The pipeline: scan native images for source/sink usage ([`nativescan`]),
//! infer input/output dependencies by differential execution ([`depgen`]
//! over an [`executor`]), turn dependencies into taint stubs ([`stubgen`]),
//! grow source/sink lists across folds ([`fixpoint`]) and run a whole-program
//! taint analysis ([`taintcore`]). [`pipeline`] wires the stages together.

pub mod codec;
pub mod depgen;
pub mod executor;
pub mod fixpoint;
pub mod nativescan;
pub mod pipeline;
pub mod stubgen;
pub mod taintcore;
pub mod typesys;
