//! Adversarial evaluation of dialogue response generators.
//!
//! Pipeline: synthesize a dialogue corpus, train a recurrent seq2seq
//! response generator, build a human-vs-machine labeled dataset from
//! heldout dialogue and generator samples, train a recurrent
//! discriminator on it, then report how well the discriminator
//! separates the two and what signals it keys on.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod discriminator;
pub mod error;
pub mod evalsuite;
pub mod generator;
pub mod nnet;
pub mod pipeline;

pub use error::{Error, Result};
