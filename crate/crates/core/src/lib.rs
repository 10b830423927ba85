//! Human-to-object flow: diffusion over per-point human displacement fields
//! conditioned on an object point cloud, and affordances read off the
//! sampled flows.

pub mod affordance;
pub mod commands;
pub mod config;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod fitting;
pub mod geometry;
pub mod io;
pub mod math;
pub mod model;
pub mod rng;
pub mod synthdata;

pub use error::{Error, Result};
