//! File formats, synthetic corpus, manifests, and the pipeline behind the
//! `nabu` command-line tool. The algorithms live in `nabu-core`; this crate
//! owns everything that touches the filesystem.

pub mod corpus;
pub mod error;
pub mod manifest;
pub mod pipeline;
pub mod synth;

pub use error::CliError;
