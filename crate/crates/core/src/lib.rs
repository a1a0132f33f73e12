//! Synonym self-alignment for concept linking.
//!
//! Train a small character n-gram encoder so that names sharing a concept
//! identifier land close together, using in-batch hard-pair mining and
//! pairwise metric-learning losses, then link mentions to concepts by exact
//! nearest-neighbour search over all dictionary names.
//!
//! Pipeline: [`ontology`] loads dictionaries, [`pairgen`] builds positive
//! pairs and batches, [`encoder`] embeds names, [`metric`] computes the
//! similarity matrix and mines pairs, [`losses`] scores them, [`trainer`]
//! updates the encoder and [`linker`] searches and evaluates.

pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod linker;
pub mod losses;
pub mod matrix;
pub mod metric;
pub mod ontology;
pub mod pairgen;
mod par;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
