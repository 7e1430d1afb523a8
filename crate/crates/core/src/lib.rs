//! Submap-based monocular pose-graph SLAM with a simulated front-end.

pub mod backend;
pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod graph;
pub mod optimizer;
pub mod sim;
mod text;

pub use error::{Error, Result};
