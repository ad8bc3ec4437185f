//! Mean-square stability of load-side frequency control on power networks
//! whose line weights fluctuate with multiplicative white noise.
//!
//! The pipeline is [`network::parse_network`] → [`model::assemble`] →
//! [`reduce::reduce`] → [`stability::analyze`]. [`moments`] and [`sde`]
//! provide the independent moment-equation and Monte Carlo checks.

pub mod bundled;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod moments;
pub mod network;
pub mod olc;
pub mod reduce;
pub mod sde;
pub mod stability;
pub mod testnet;

pub use error::{Error, Result};
pub use model::{assemble, StateSpaceModel};
pub use network::{parse_network, Bus, BusKind, Line, PowerNetwork, Scenario};
pub use olc::{solve_olc, OlcSolution};
pub use reduce::{reduce, ReduceOptions, ReducedModel};
pub use stability::{analyze, critical_variance, ExponentMode, StabilityReport};
