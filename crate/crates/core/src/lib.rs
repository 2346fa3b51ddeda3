//! Tree partitions on split-nets, anisotropic approximation, sparse forest
//! priors and sum-of-trees posterior samplers.

pub mod akd;
pub mod approx;
pub mod bart;
pub mod experiments;
pub mod error;
pub mod funcs;
pub mod geometry;
pub mod priors;
pub mod splitnet;

pub use error::{Error, Result};
