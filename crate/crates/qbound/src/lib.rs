//! File formats and the command-line pipeline around `qbound-core`.
//!
//! A model is a JSON manifest (`model.json`) describing the layers plus a
//! table of tensors, and a binary blob (`weights.bin`) holding those tensors
//! as little-endian `f32` followed by a CRC32 of everything before it.
//! Datasets use a small binary container (`dataset.bin`).

pub mod commands;
pub mod dataset;
pub mod files;
pub mod table;

pub use dataset::{read_dataset, write_dataset};
pub use files::{FormatError, Manifest, ModelFile, QuantizationInfo, TensorEntry};
pub use table::{Cell, Table};
