//! Multitask BLSTM-CRF named entity recognition for noisy social-media text.
//!
//! Words are represented by frozen pretrained vectors (with a subword
//! fallback for out-of-vocabulary tokens), learned POS-tag embeddings and a
//! character-level BLSTM over IPA phonemes with articulatory features. Two
//! architectures share that encoder: an end-to-end network with a CRF per
//! task, and a stacked extractor with softmax heads whose penultimate
//! activations train a standalone CRF.

pub mod corpus;
pub mod crf;
pub mod diagnostics;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod numeric;
pub mod phonology;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
