//! Synthetic railway-obstacle data, pseudo-pair optical flow and
//! railway-area segmentation.

pub mod cli;
pub mod compositor;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod extraction;
pub mod fixtures;
pub mod flow;
pub mod manifest;
pub mod nn;
pub mod plugin;
pub mod raster;
pub mod scene;
pub mod segmentation;

pub use error::{Error, Result};
