//! Monte Carlo layer: path simulation, law-of-large-numbers checks against
//! the homogenized drift, and occupation-measure statistics.
//!
//! Randomness is counter-based: every path owns a ChaCha stream and every
//! step a fixed block of that stream, so ensembles are reproducible across
//! thread schedules, and plain and controlled runs with the same seed share
//! noise exactly.

mod rng;

pub mod lln;
pub mod occupation;
pub mod sim;

pub use lln::{lln_check, LlnReport};
pub use occupation::{chi_squared_distance, occupation_run, OccupationConfig, OccupationReport};
pub use sim::{
    simulate, Controller, InitialMomentum, PathEnsemble, SimConfig, SystemKind,
};
