//! Link-level simulation and analysis of a point-to-point link between two
//! energy-harvesting sensor nodes.
//!
//! The receiver runs selective sampling: when it cannot afford to sample a
//! whole packet it samples a fraction `x/β`, stores the samples and reports
//! `NAKx` so that the transmitter only resends the missing part. The crate
//! provides
//!
//! * [`channel`]: finite-state Markov model of a Rayleigh fading channel,
//! * [`energy`]: harvesting processes, integer battery dynamics and the node
//!   power-consumption model,
//! * [`pep`]: BPSK bit error probability, the convolutional-code union bound
//!   and the per-state packet error table,
//! * [`protocol`]: the ACK/NAK/NAKx transmitter and receiver state machines,
//! * [`policy`]: belief tracking, relative value iteration, the most-likely
//!   state heuristic, greedy and equal power assignment, lookup tables,
//! * [`analysis`]: exact Markov-chain packet drop probability for the fixed
//!   power policy, plus the closed-form per-attempt bound,
//! * [`sim`]: the slot-level Monte Carlo engine and sweep harness,
//! * [`config`] and [`experiments`]: configuration files and the named
//!   experiments driven by the `ehlink` binary.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod markov;
pub mod pep;
pub mod policy;
pub mod protocol;
pub mod sim;

pub use error::{Error, Result};
