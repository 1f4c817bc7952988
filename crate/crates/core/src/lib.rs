//! SeqCopyNet: a sequence-to-sequence summarizer that can copy whole source
//! spans in one decoding action.
//!
//! The pipeline is: [`spanoracle`] builds vocabularies and gold copy spans,
//! [`model`] holds the parameters, [`training`] fits them, [`search`] decodes
//! and [`evalmetrics`] scores the output. [`cli`] ties these to files.

pub mod cli;
pub mod copymod;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evalmetrics;
pub mod model;
pub mod numcore;
pub mod search;
pub mod spanoracle;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
pub use model::{Hyper, Model, SourceMemory};
pub use search::{beam_decode, greedy_decode, Hypothesis, Source};
pub use spanoracle::{Pair, TrainingInstance, Vocabulary};
pub use training::{train, TrainConfig};
