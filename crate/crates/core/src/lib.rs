//! Optimal ad-impression allocation over `(campaign, creative, frame, location)`
//! grids.
//!
//! The toolkit builds a revenue-maximizing linear program from projected
//! supply and profits, solves it with a two-phase simplex, turns the solution
//! into per-slot delivery probabilities and re-plans every frame in a
//! rolling-horizon loop. A traffic simulator compares that loop against a
//! pacing greedy baseline.

pub mod cli;
pub mod domain;
pub mod engine;
pub mod error;
pub mod feasibility;
pub mod fixtures;
pub mod io;
pub mod model;
pub mod projection;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
