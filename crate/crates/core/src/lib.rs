//! Toolkit for multi-domain translation experiments: corpus handling, joint
//! BPE, sentence embeddings, clustering, label propagation, domain tags and
//! factors, a small attention NMT model, BLEU with bootstrap significance,
//! and an experiment pipeline tying them together.

pub mod annotate;
pub mod bpe;
pub mod classify;
pub mod cluster;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod features;
pub mod nmt;
pub mod pipeline;
pub mod sentvec;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
