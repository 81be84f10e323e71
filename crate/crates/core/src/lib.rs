//! Decoupled reasoner/prover pipeline for lemma-driven formal theorem proving.

pub mod config;
pub mod mock;
pub mod pipeline;
pub mod prover;
pub mod reasoner;
pub mod statement;
pub mod store;
