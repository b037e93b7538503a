//! Minimal dense `f64` compute core: tensors, a reverse-mode tape with the
//! operations needed by point-cloud EdgeConv networks, AdamW and a
//! reduce-on-plateau scheduler.

mod edgeconv;
mod error;
pub mod init;
pub mod kernels;
mod optim;
mod sched;
mod tape;
mod tensor;

pub use error::{NumError, Result};
pub use optim::{AdamW, AdamWConfig};
pub use sched::PlateauScheduler;
pub use tape::{BatchNormStats, Gradients, Mode, NeighborTable, Tape, Var};
pub use tensor::Tensor;
