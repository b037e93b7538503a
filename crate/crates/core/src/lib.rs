//! Localization of animation-skeleton joints inside human point clouds.

mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod provenance;
pub mod rigdata;
pub mod synth;
pub mod train;

pub use error::{CoreError, Result};
