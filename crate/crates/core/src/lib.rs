//! End-to-end span-ranking coreference resolution.

pub mod config;
pub mod corpus;
pub mod diffcore;
pub mod encoder;
pub mod nn;
pub mod pruner;
pub mod scorer;
pub mod model;
pub mod metrics;
pub mod inference;
pub mod trainer;
