//! Hyperspherical representation learning for open-set recognition:
//! synthetic vMF mixtures, a two-stage trainer, post-hoc scoring rules and
//! the usual open-set metrics.

pub mod augment;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod report;
pub mod scoring;
pub mod training;

pub use error::{Error, Result};
pub use exec::Exec;
