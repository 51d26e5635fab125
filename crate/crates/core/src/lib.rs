//! Question answering over a triple knowledge base with learned embeddings.
//!
//! The pipeline: load `(left entity, relationship, right entity)` triples
//! ([`kb`]), turn them into natural-language training questions with
//! templates ([`datagen`]), train a joint word/symbol embedding model by
//! margin ranking ([`model`], [`trainer`]), optionally fit a bilinear
//! rescoring matrix on top ([`finetune`]), answer questions by ranking
//! candidate triples ([`ranker`]), and measure retrieval quality
//! ([`evalkit`]).

pub mod datagen;
pub mod error;
pub mod evalkit;
pub mod finetune;
pub mod kb;
pub mod model;
pub mod ranker;
mod seed;
pub mod trainer;

pub use error::{Error, Result};
