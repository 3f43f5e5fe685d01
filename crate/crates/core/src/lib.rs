//! Contrastive training and evaluation workbench for dialogue inference.

pub mod corpus;
pub mod metrics;
pub mod backend;
pub mod objective;
pub mod negatives;
pub mod trainer;
pub mod analysis;
pub mod artifact;
pub mod config;
pub mod pipeline;
