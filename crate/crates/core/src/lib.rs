//! Session-based next-item recommendation with dual positional encodings.
//!
//! The crate is organized bottom-up:
//!
//! - [`numcore`]: tensors, reverse-mode autodiff tape, Adam.
//! - [`posenc`]: positional encoding schemes and the awareness checker.
//! - [`sessgraph`]: session graphs, anchor neighborhoods, per-node encodings.
//! - [`posrec`]: the gated-graph + transformer-readout recommender.
//! - [`datapipe`]: click-log ingestion, filtering, augmentation, splits.
//! - [`evalkit`]: training loop, ranking metrics and experiment harnesses.

pub mod datapipe;
pub mod error;
pub mod evalkit;
pub mod manifest;
pub mod numcore;
pub mod posenc;
pub mod posrec;
pub mod sessgraph;

pub use error::{Error, ErrorCategory, Result};
pub use manifest::Manifest;
pub use numcore::{Adam, ParamStore, Tape, Tensor, Var};
pub use posenc::{EncodingKind, EncodingScheme};
pub use posrec::{ModelConfig, PosRecModel, Prediction};
pub use sessgraph::{Session, SessionGraph};
