//! Vision-and-language navigation on synthetic graph worlds.
//!
//! The crate is self-contained: a reverse-mode autodiff engine over dense
//! `f64` tensors ([`tensor`]), transformer building blocks ([`nn`]), an
//! instruction parser ([`semparse`]), the two semantic encoders ([`igl`],
//! [`asv`]), the topological memory with its aggregation and recurrent
//! update ([`memgraph`]), the full navigation agent and its trainer
//! ([`agent`]), and a deterministic graph-world simulator with evaluation
//! metrics ([`simworld`]).
//!
//! Everything is seeded and single-threaded by design: the same seed and
//! config produce byte-identical artifacts on every run.

pub mod agent;
pub mod asv;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod igl;
pub mod memgraph;
pub mod semparse;
pub mod simworld;
pub mod trace;
pub mod nn;
pub mod param;
pub mod tensor;

pub use error::{Error, Result};
