//! The EdgeConv joint-localization network and its checkpoints.

pub mod checkpoint;
pub mod config;
pub mod network;

pub use checkpoint::{Checkpoint, CheckpointHeader, TrainingState};
pub use config::ModelConfig;
pub use network::{
    combine, edge_features, edgeconv_forward, loss, neighbor_table, HullCertificate, JointLocalizer, NeighborSpace,
    Prediction,
};
