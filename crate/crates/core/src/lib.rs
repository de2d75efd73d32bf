//! Multi-view shape embedding: mesh handling, view rendering and selection,
//! encoder training, retrieval and evaluation.

pub mod config;
pub mod dataset;
mod error;
pub mod geometry;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod render;
pub mod retrieval;
pub mod shapes;
pub mod view_select;

pub use error::{Error, Result};
