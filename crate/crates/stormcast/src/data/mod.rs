//! File formats and the synthetic storm-sequence generator.
//!
//! Everything on disk is little-endian and round-trips bit-exactly: rasters
//! as float32 binary stacks, lightning events as CSV, model state as a named
//! parameter-blob container. Sequences of synthetic storm frames stand in
//! for the satellite/lightning feeds the pipeline was designed around.

pub mod checkpoint;
pub mod events;
pub mod raster;
pub mod synth;

pub use checkpoint::{Checkpoint, ParamBlob};
pub use events::{read_events, write_events, LightningEvent};
pub use raster::{read_raster, write_raster};
pub use synth::{gen_sequence, SynthConfig, SynthFrame};
