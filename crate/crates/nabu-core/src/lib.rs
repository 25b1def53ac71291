//! Core algorithms for a multilingual graph-to-text verbalizer.
//!
//! The crate is `no_std`-compatible (it needs `alloc` only); everything here
//! is pure computation over in-memory data. File formats, the CLI, and the
//! synthetic corpus live in the companion `nabu-cli` crate.
//!
//! Pipeline, end to end:
//!
//! 1. [`graph`] parses RDF triples and reifies them: every predicate becomes
//!    a node joined to its subject by an `A0` edge and its object by an `A1`
//!    edge, and a language node selects the output language.
//! 2. [`tokenizer`] trains a shared BPE vocabulary across all target
//!    languages.
//! 3. [`gat`] encodes the reified graph with multi-head graph attention over
//!    fused node/label/edge vectors; [`transformer`] decodes text
//!    autoregressively with cross-attention over the encoder memory.
//! 4. [`decoding`] runs length-normalized beam search and the copy mechanism
//!    for unknown-token outputs.
//! 5. [`metrics`] scores generated text with corpus BLEU and chrF++.
//!
//! All numerics run through the reverse-mode tape in [`tensor`], generic over
//! [`scalar::Scalar`] so the same code runs in f32 for production and f64 for
//! gradient checking and bit-exact reproducibility.

#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod checkpoint;
pub mod config;
pub mod decoding;
pub mod gat;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod training;
pub mod transformer;

pub use config::{EncoderKind, ModelConfig, SessionConfig};
pub use graph::{LanguageTag, ReifiedGraph, Triple};
pub use scalar::Scalar;
pub use tensor::{Tape, Tensor};
