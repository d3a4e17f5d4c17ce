//! Symbolic-music pre-training pipeline over compound note tokens.
//!
//! The crate covers the full loop at desk scale: parsing Standard MIDI
//! Files and plain text scores into a validated [`score::Score`], turning
//! scores into four-attribute compound tokens ([`tokenizer`]), producing
//! corrupted inputs and pianoroll/chromagram targets for self-supervised
//! pre-training ([`ssl`]), a small bidirectional transformer encoder with
//! hand-rolled backprop ([`model`]), pre-training and fine-tuning loops
//! ([`train`]), downstream-task adapters ([`tasks`]) and evaluation
//! metrics ([`metrics`]).
//!
//! Everything is deterministic given explicit seeds. Batch-level work is
//! data-parallel via rayon when the `parallel` feature (default) is on;
//! disabling it falls back to sequential execution with identical results.

pub mod error;
pub mod metrics;
pub mod model;
pub mod par;
pub mod rng;
pub mod score;
pub mod ssl;
pub mod synth;
pub mod tasks;
pub mod tokenizer;
pub mod train;

pub use error::{CoreError, Result};
