//! Simulation and verification toolkit for charged particles driven by a
//! synthesized zero-point field.
//!
//! The crate is organised around five pieces:
//!
//! * [`field`] synthesizes stationary Gaussian realizations of the zero-point
//!   electric field with its `ω³` spectrum.
//! * [`dynamics`] integrates ensembles of particles under that field with
//!   order-reduced radiation reaction, plus energy-balance diagnostics.
//! * [`kinematics`] estimates the flow, osmotic and access velocities and the
//!   diffusion coefficient from trajectory ensembles.
//! * [`schrodinger`] is the reference quantum solver with its hydrodynamic
//!   field diagnostics.
//! * [`harness`] wires everything into named, config-driven experiments.

pub mod chirp;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod harness;
pub mod kinematics;
pub mod oracle;
pub mod potential;
pub mod rng;
pub mod schrodinger;
pub mod stats;
mod tridiag;

pub use error::{Error, Result};
