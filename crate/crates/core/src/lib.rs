//! Long-document binary classification: overlapping chunks, a small
//! transformer encoder, an LSTM over chunk vectors, and the evaluation
//! statistics used to compare configurations.

pub mod autograd;
pub mod checkpoint;
pub mod chunking;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod recurrence;
pub mod schedule;
pub mod tensor;
pub mod train;

pub use chunking::{
    chunk_count, chunk_document, decorate, tokenize, ChunkSet, EncoderWindow, TokenizedDocument, Vocabulary,
};
pub use error::{Error, Result};
pub use model::{ModelState, PipelineConfig};
pub use pipeline::{plan_passes, predict_document};
pub use recurrence::Prediction;
