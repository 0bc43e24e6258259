//! Two-stage training, inference and persistence.

pub mod checkpoint;
pub mod model;
pub mod predictions;
pub mod train;

pub use checkpoint::*;
pub use model::*;
pub use predictions::*;
pub use train::*;
