//! Experiment orchestration: configuration, setup, Monte Carlo studies and
//! result files.

pub mod config;
pub mod output;
pub mod setup;
pub mod studies;

pub use config::Config;
pub use setup::Setup;
