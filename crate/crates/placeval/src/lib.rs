//! Mobility-informed real-estate valuation.
//!
//! An end-to-end pipeline from raw device pings to trained, explained price
//! models: stop detection compresses trajectories, nighttime clustering
//! infers homes, census block-group demographics attach to users and
//! properties, a spatial index aggregates non-resident visitors around each
//! property per day of week, and a two-forest stacked ensemble (ridge
//! meta-learner) predicts prices from static and dynamic features. Shapley
//! attribution explains what the models use.
//!
//! The `examples/` directory holds one runnable program per capability;
//! `placeval` (the single binary) exposes the same stages as subcommands
//! for file-based pipeline runs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod explain;
pub mod features;
pub mod geo;
pub mod home;
pub mod ml;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod trajectory;

pub use config::RunConfig;
pub use error::{Error, Result};
