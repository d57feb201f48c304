//! Gated recurrent cell laboratory.
//!
//! Implements seven gated recurrent architectures (vanilla LSTM, the NIG /
//! NOG / NFG / NPH ablations, GRU and the forget-gate-only S-LSTM) together
//! with the full training, generation and analysis stack around them: a
//! feed-forward + recurrent acoustic model, dynamic-feature conditioning,
//! maximum-likelihood parameter generation, objective metrics and gate /
//! cell-state analyses, all on a deterministic synthetic corpus.

pub mod analysis;
pub mod backprop;
pub mod cells;
pub mod config;
pub mod container;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod mlpg;
pub mod network;
pub mod pipeline;

pub use error::{Error, Result};
