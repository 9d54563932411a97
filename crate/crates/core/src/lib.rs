//! Pairwise-parallel Mølmer–Sørensen gates on the two radial mode sets of a
//! trapped-ion chain.
//!
//! The crate covers the whole pipeline:
//!
//! - [`chain`]: equilibrium positions, normal modes and Lamb–Dicke couplings.
//! - [`pulse`]: amplitude-modulated pulse design with motional closure.
//! - [`dynamics`]: exact spin⊗motion evolution and the analytic propagator,
//!   including the x/y cross-coupling check.
//! - [`circuit`]: a small noisy spin-circuit simulator with parity analysis.
//! - [`scheduler`]: packing XX gates onto the X and Y buses.
//! - [`experiments`]: GHZ and transverse-field Ising simulations.
//! - [`cli`]: the file-based pipeline behind the `ionpar` binary.

pub mod chain;
pub mod circuit;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod integrals;
pub mod io;
pub mod operator;
pub mod pulse;
pub mod scheduler;
pub mod units;

pub use chain::{Axis, IonChain, ModeSet, TrapConfig};
pub use error::{Error, Result};
pub use pulse::{GateSpec, PulseSchedule, Segment};
