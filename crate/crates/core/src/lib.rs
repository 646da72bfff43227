//! Density-weighted behavior cloning from a few demonstrations and a large pool of
//! lower-quality trajectories.
//!
//! Two conditional VQ-VAE density estimators are trained on demonstrations and on the
//! suboptimal data, the first one adversarially so that it also pushes suboptimal actions
//! down ([`ade`]). Their log-density gap weights a regression of the policy onto the data
//! ([`dwr`]). Everything runs on a small in-crate autodiff ([`nn`]) over synthetic control
//! tasks ([`envs`]); [`pipeline`] strings the stages together and [`verify`] checks the
//! invariants they rely on.

pub mod error;
pub mod ade;
pub mod config;
pub mod csv;
pub mod data;
pub mod dwr;
pub mod envs;
pub mod fixtures;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod verify;
pub mod vqvae;

pub use error::{Error, Result};
