//! Neural SMT feature toolkit.
//!
//! Extracts training examples for six translation features from aligned
//! bitext, trains them as feedforward networks (with optional tensor
//! hidden layers and multitask parameter sharing), and evaluates them by
//! held-out log-likelihood and n-best hypothesis rescoring.
//!
//! Pipeline: [`corpus`] ingests text and alignments, [`align`] derives
//! affiliations and orientation structure, [`extract`] materializes
//! fixed-width example shards, [`mtl`] builds and trains task groups over
//! the [`net`] core, and [`eval`] reports likelihoods and hypothesis
//! scores. [`synth`] generates seeded toy corpora for desk-scale
//! experiments.

pub mod align;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod extract;
pub mod mtl;
pub mod net;
pub mod synth;

pub use error::{Error, Result};
