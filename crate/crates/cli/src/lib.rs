//! Command-line pipeline around `catanet-core`: synthetic data generation,
//! fold training, ensemble evaluation with figures, streaming inference,
//! speed measurement and ablation sweeps.

pub mod ablate;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;
pub mod plot;
pub mod stream;

pub use commands::{exit_code, run, Cli};
