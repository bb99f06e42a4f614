//! Sequence-to-sequence training with oracle-sampled decoder contexts.
//!
//! A GRU attention encoder-decoder trained by maximum likelihood, where the
//! token fed as decoder context at each step is sampled between the ground
//! truth and a model-derived *oracle*: the per-step argmax of the (optionally
//! Gumbel-perturbed) predicted distribution, or a whole force-decoded beam
//! candidate reranked by smoothed sentence BLEU. The ground-truth probability
//! decays with the training epoch, moving training conditions toward
//! inference conditions.
//!
//! Modules mirror the system's layers: [`numerics`] (tensors, reverse-mode
//! tape, RNG), [`model`] (encoder/attention/two-GRU decoder), [`metrics`]
//! (BLEU), [`search`] (beam search and force decoding), [`oracle`]
//! (word/sentence oracle selection), [`schedule`] (decay and context
//! sampling), [`data`] (corpora, vocabularies, batching, synthetic tasks),
//! and [`trainer`] (loss, optimizers, training loop, evaluation).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod schedule;
pub mod search;
pub mod trainer;

pub use error::{Error, Result};

/// Token id type used across the crate.
pub type TokenId = u32;
