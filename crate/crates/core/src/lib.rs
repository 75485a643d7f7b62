//! Entity alignment between two knowledge graphs with dangling-entity
//! detection: dataset construction, embedding-based aligners (MTransE and a
//! one-hop aggregation encoder), three jointly trained detection objectives
//! (NNC, MR, BR), exact NN/CSLS retrieval, and the relaxed and consolidated
//! evaluation protocols.

pub mod align;
pub mod config;
pub mod dataset;
pub mod detect;
pub mod embed;
pub mod error;
pub mod eval;
pub mod forge;
pub mod kg;
pub mod matrix;
pub mod nn;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
