//! Lightning nowcasting from optical-flow extrapolation errors.
//!
//! The pipeline turns sequences of (synthetic) satellite frames and lightning
//! observations into a pixelwise "lightning within the next 15 minutes"
//! prediction:
//!
//! 1. [`flow`] estimates dense TV-L1 optical flow between consecutive frames
//!    and extrapolates the latest frame one step forward; the absolute
//!    difference to the actually observed frame is the nowcast error.
//! 2. [`preprocess`] assembles nine per-channel nowcast-error maps plus an
//!    accumulated-lightning map into normalized ten-channel feature stacks and
//!    cuts them into training tiles.
//! 3. [`model`] is a residual UNet++ segmentation network (with a plain
//!    UNet++ ablation variant) built on the [`tensor`] autograd engine.
//! 4. [`train`] runs weighted-BCE deep-supervised training with an
//!    SGD + plateau learning-rate schedule and temporal cross-validation.
//! 5. [`eval`] computes rare-event verification metrics (TPR/POD, TNR,
//!    accuracy, FAR) from pixelwise confusion counts.
//!
//! [`data`] holds the on-disk formats (raster files, event CSV, checkpoints)
//! and the synthetic storm-sequence generator used in place of proprietary
//! satellite/lightning feeds. [`cli`] wires everything into the `stormcast`
//! binary; the `examples/` directory shows each capability as a runnable
//! program.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod flow;
pub mod grid;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
