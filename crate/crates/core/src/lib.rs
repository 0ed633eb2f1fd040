//! MCS success-probability forecasting for 5G multicast-broadcast links.
//!
//! The crate covers the full desk-scale pipeline:
//!
//! - [`channelsim`]: synthetic slot-level telemetry with an OLLA-driven scheduler.
//! - [`ingest`]: LOCF alignment of heterogeneous reports onto downlink slots, filtering.
//! - [`features`]: the 12-column feature vector, z-score normalization, 40-slot windows.
//! - [`labels`]: conservative per-MCS success counts over a GOP horizon.
//! - [`dataset`]: temporal splits and the binary sample file.
//! - [`model`]: a small pre-LN Transformer encoder with hand-written backward pass.
//! - [`training`]: asymmetric safety loss, AdamW and a one-cycle schedule.
//! - [`evalsim`]: GOP-paced scheduler simulation comparing five policies.
//! - [`cli`]: the `mcsprob` command-line pipeline.

pub mod channelsim;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod evalsim;
pub mod features;
pub mod ingest;
pub mod labels;
pub mod model;
pub mod tdd;
pub mod training;

pub use error::{Error, Result};

/// Number of first-transmission MCS indices (0..=27) the model predicts.
pub const NUM_MCS: usize = 28;
