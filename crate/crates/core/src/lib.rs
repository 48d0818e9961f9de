//! Question answering over personal photo albums.
//!
//! The pipeline has three stages. A question is encoded twice: an LSTM
//! state for inference and a small set of concept terms used as a search
//! query. The concept query runs against a BM25 index over every photo
//! modality (time, GPS, titles, tags, captions, concepts, OCR). The top
//! ranked photos are turned into a lookup embedding (modality embeddings,
//! matched-answer-class embeddings and attention over rank positions)
//! which a two-layer classifier scores against the multiple choices.
//!
//! Everything trainable runs on [`nn`], a small reverse-mode tape over
//! `f64` vectors.

pub mod baselines;
pub mod corpus;
pub mod encoders;
pub mod engine;
mod error;
pub mod eval;
pub mod index;
pub mod mmlookup;
pub mod nn;
pub mod textproc;

pub use corpus::{
    AnswerKey, AnswerVocab, Album, Category, Corpus, FeatureStore, PhotoDoc, QAItem, Split,
    SyntheticConfig,
};
pub use engine::{Engine, EngineConfig};
pub use error::{Error, Result};
pub use eval::AccuracyReport;
pub use index::{InvertedIndex, RankedList};
pub use mmlookup::{MemexNet, MemexNetConfig};
