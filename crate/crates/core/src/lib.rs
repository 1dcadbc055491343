//! Metaphor detection by contrasting a target word's contextual meaning with
//! its basic meaning.
//!
//! The basic meaning of a target is estimated by averaging the encoder's
//! target hidden states over training sentences where the same target is
//! annotated literal. A linear head combines three contrasts:
//!
//! * contextual target vs. basic meaning,
//! * contextual target vs. the word encoded in isolation,
//! * contextual target vs. the whole sentence,
//!
//! and is trained with binary cross entropy together with the encoder.

pub mod basic_index;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fingerprint;
pub mod model;
pub mod nn;
pub mod optim;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
