//! Multi-domain extractive summarization toolkit.
//!
//! * [`corpus`]: multi-domain corpora, tokenization, vocabularies, statistics.
//! * [`metrics`]: ROUGE-1/2/L and extractive-fragment measures.
//! * [`labeling`]: greedy oracle labels and the Lead baseline.
//! * [`nnet`]: tensors, a tape-based reverse-mode autodiff, the CNN sentence
//!   encoder + self-attention document scorer, optimizers and checkpoints.
//! * [`strategies`]: joint, pretrained-feature, domain-tag and meta-learning
//!   training.
//! * [`eval`]: cross-domain matrices, in/out-of-domain evaluation, position
//!   histograms, gamma sweeps, the domain classifier and synthetic corpora.

pub mod corpus;
pub mod error;
pub mod eval;
pub mod labeling;
pub mod metrics;
pub mod nnet;
pub mod strategies;

pub use error::{Error, Result};
