//! kinlang: a numerical laboratory for multiscale kinetic Langevin dynamics.
//!
//! The crate studies the fast-slow system in which a slow coordinate q is
//! driven by a fast periodic environment r = q/δ (mod 1) and a momentum p
//! relaxing at rate λ/m. It provides:
//!
//! - spectral (Hermite × Fourier) Galerkin assembly of the fast generator
//!   L = (λ/m)A + (1/√m)B and its overdamped limit,
//! - stationary densities of the fast process (hypoelliptic and overdamped)
//!   with dual-route cross-validation and small-mass sweeps,
//! - cell-problem correctors χ, Φ and the √m expansion with remainder control,
//! - homogenized drift/mobility coefficients (r_m, Q_m) and their m → 0 limits,
//! - quadratic action functionals, the optimal tilting control, and
//!   importance-sampling estimators for rare events,
//! - a stiff-stable Strang-splitting simulator with exact Ornstein–Uhlenbeck
//!   substeps, counter-based reproducible noise streams, occupation-measure
//!   accounting, and law-of-large-numbers checks.

pub mod cell;
pub mod dynamics;
pub mod error;
pub mod homogenize;
pub mod identities;
pub mod io;
pub mod ldp;
pub mod model;
pub mod solver;
pub mod spectral;
pub mod stationary;

pub use error::{Error, Result};
