//! Feedback synthesis for leader–follower opinion dynamics.
//!
//! A binary problem with two followers and two leaders is solved offline by
//! dynamic programming ([`binary`]); the resulting feedback drives the leaders
//! inside a two-population Boltzmann particle scheme ([`dsmc`]). [`microsim`]
//! integrates the finite agent system directly and [`diagnostics`] turns
//! particle ensembles into densities, moments and costs.

pub mod binary;
pub mod config;
pub mod control;
pub mod diagnostics;
pub mod dsmc;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod microsim;

pub use error::{Error, Result};
