//! In-context learning of functions with a prescribed number of local minima.
//!
//! The crate is organised bottom-up:
//!
//! - [`fungen`] builds and evaluates functions with prescribed minima.
//! - [`dataset`] samples such functions and lays them out as prompts.
//! - [`models`] holds the decoder-only transformers and the two-layer MLP
//!   baseline, with hand-written backward passes.
//! - [`training`] is the AdamW/MSE training loop and its metrics stream.
//! - [`evaluation`] scores trained models and assembles result tables.
//! - [`cli`] parses experiment configs and drives the grid runner.

pub mod cli;
pub mod dataset;
pub mod evaluation;
pub mod fungen;
pub mod models;
pub mod training;
