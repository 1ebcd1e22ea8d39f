//! Penalization and reflection solvers for mean field games on convex
//! domains: geometry, measures, particle simulation, grid dynamic
//! programming for the best response and the equilibrium loop.

pub mod best_response;
pub mod controls;
pub mod error;
pub mod fixed_point;
pub mod geometry;
pub mod io;
pub mod measures;
pub mod model;
pub mod presets;
pub mod rng;
pub mod simulator;
pub mod transport;

pub use error::{Error, Result};
