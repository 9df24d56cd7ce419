//! Image manipulation detection with edge and noise supervision.
//!
//! * [`model`]: two-branch network and its building blocks
//! * [`losses`]: pixel Dice, edge Dice and image-level BCE
//! * [`data`]: synthetic forgeries, edge labels, augmentation, ingestion
//! * [`metrics`]: pixel/image F1, AUC, Com-F1, threshold search, robustness sweeps
//! * [`trainer`]: Adam training loop with checkpointing

pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
