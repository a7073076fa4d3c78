//! In-context learning of low-rank hidden Markov models with an explicitly
//! constructed attention-only Transformer.
//!
//! The crate builds the prompt matrix from sampled demonstrations
//! ([`context`]), assembles copy, gradient-descent and prediction layers by
//! formula ([`construct`]), evaluates them ([`kernel`]) and compares every
//! stage with independent references: exact filtering ([`hmm`]), the
//! fixed-memory predictor ([`memory`]) and closed-form / iterative least
//! squares ([`oracles`]). [`harness`] ties these into error measurements and
//! parameter sweeps.

pub mod construct;
pub mod context;
pub mod error;
pub mod harness;
pub mod hmm;
pub mod kernel;
pub mod linalg;
pub mod memory;
pub mod oracles;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
