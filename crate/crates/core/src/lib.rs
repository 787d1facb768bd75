//! Risk-averse finite-horizon MDPs under dynamic quantile-based risk measures.
//!
//! * [`risk`]: quantile-based risk measures and their empirical estimators.
//! * [`mdp`]: the model abstraction, state-action enumeration and greedy values.
//! * [`adp`]: the Dynamic-QBRM approximate dynamic programming solver.
//! * [`rds`]: risk-directed importance sampling for the solver.
//! * [`saa`]: sample-average backward recursion for policy evaluation and
//!   benchmarking.
//! * [`energy`]: an energy storage and bidding model.

pub mod adp;
pub mod energy;
pub mod error;
pub mod mdp;
pub mod models;
mod nnls;
pub mod rds;
pub mod rng;
pub mod risk;
pub mod saa;
pub mod trace;

pub use error::{Error, Result};
pub use mdp::{MdpModel, NoisePoint, PolicyTable, Sense, StateActionSpace};
pub use risk::{Combiner, QbrmSpec, RiskLevels, WeightedSample};
