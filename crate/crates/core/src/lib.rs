//! Simultaneous machine translation with read/write policies learned from
//! full-sentence attention.
//!
//! The crate is organised along the data flow:
//!
//! - [`labels`] turns attention matrices into staircase policy labels.
//! - [`policy`] is the bilinear read/write classifier and its trainer.
//! - [`toy`] is a deterministic translation model with known alignments.
//! - [`decoder`] runs a frozen model and a policy over a stream of ASR events.
//! - [`asr`] simulates a streaming recognizer from timed transcripts.
//! - [`metrics`] computes Average Lag, user-perceived latency and BLEU.
//! - [`experiment`] wires everything into the command-line pipeline.

pub mod asr;
pub mod decoder;
pub mod error;
pub mod experiment;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod policy;
pub mod toy;
pub mod types;

pub use error::{Error, Result};
pub use labels::{generate_label_matrix, Action, LabelGenConfig};
pub use model::{Candidate, TranslationModel, EOS};
pub use policy::{PolicyParams, StateVec};
pub use types::{AttentionMatrix, EventKind, PolicyLabelMatrix, SessionTrace, StreamEvent};
