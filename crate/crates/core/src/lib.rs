//! Dual-contrast cycle-consistent adversarial translation between two
//! unpaired image domains, with the evaluation and experiment harness
//! around it.
//!
//! Modules mirror the pipeline: [`model`] builds the networks, [`losses`]
//! composes the objective, [`metrics`] scores images, [`data`] ingests and
//! samples the two pools, [`trainer`] runs the alternating optimization and
//! [`experiments`] orchestrates ablations, sweeps and figures.

mod error;

pub mod data;
pub mod experiments;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{Image, ValueRange};

pub use dccycle_autograd as autograd;

/// Content hash of the crate sources this binary was built from.
pub const SOURCE_HASH: &str = env!("DCCYCLE_SOURCE_HASH");
