//! Fundamental precision bounds for frequency estimation under many-body
//! Markovian noise, plus a quantum-trajectory benchmark of a lossy two-mode
//! atom interferometer.
//!
//! The toolkit has three layers:
//!
//! - operator algebra on truncated bosonic spaces ([`fock`]), loss-model
//!   description and the Hamiltonian-in-Lindblad-Span test ([`model`]), and
//!   the reduced-particle-number construction ([`rpn`]);
//! - the bound engine ([`bound`]): a small dense semidefinite solver for the
//!   operator-norm minimization, analytic two-body-loss bounds, asymptotic
//!   scaling rules and time-dependent integration;
//! - physics front-ends: code-space verification under the atom-number
//!   superselection rule ([`qec`]), condensate rate models ([`bec`]) and a
//!   Monte Carlo wavefunction simulator ([`traj`]).
//!
//! The `qmetro` binary exposes all of it behind TOML configs emitting CSV.

pub mod bec;
pub mod bound;
pub mod cli;
pub mod error;
pub mod fock;
pub mod model;
pub mod qec;
pub mod rpn;
pub mod traj;

pub use error::{Error, Result};
