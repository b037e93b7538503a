//! End-to-end steps behind the command-line tool.

pub mod evaluate;
pub mod predict;
pub mod preprocess;

pub use evaluate::{evaluate_checkpoint, evaluate_predictions, EvalOptions, Evaluation};
pub use predict::{input_kind, predict, write_prediction, InputKind, PredictOutcome, PredictionFile, SKELETON_FILE};
pub use preprocess::{preprocess, sample_seed, PreprocessOptions, PreprocessProvenance, PROVENANCE_FILE};
