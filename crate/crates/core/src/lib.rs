//! Simulation and optimization toolkit for a variable-impedance joint.
//!
//! The crate models a single-link actuator whose equilibrium position,
//! stiffness (via spring pretension) and damping are all commanded inputs,
//! and layers three optimizers on top of the simulation:
//!
//! * a box-constrained iterative LQR that generates individual reaching
//!   sub-movements ([`ilqr`]),
//! * a tracking inverse-dynamics controller with null-space shaping for
//!   smooth minimum-jerk sequences ([`tidc`]),
//! * an evolution-strategy outer loop that tunes effort weights, stiffness
//!   presets, durations or movement-primitive parameters to minimize the
//!   measured energy of a whole movement sequence ([`es`]).
//!
//! Energy is always audited by resimulating episodes at a fine time step
//! with a motor power model that refuses to regenerate negative work
//! ([`energy`]). The [`harness`] module packages the reference experiments
//! behind the `viaseq` command-line interface.

pub mod config;
pub mod cost;
pub mod dmp;
pub mod dynamics;
pub mod energy;
pub mod error;
pub mod es;
pub mod frontier;
pub mod harness;
pub mod ilqr;
pub mod minjerk;
pub mod params;
pub mod state;
pub mod tasks;
pub mod tidc;

pub use error::{Error, Result};
pub use params::PhysicalParams;
pub use state::{Control, State, Trajectory};
