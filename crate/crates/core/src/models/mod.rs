//! Small reference models used by tests, benches and the CLI registry.

mod toy;

pub use toy::{GaussianStage, ToyChain, ToyNoise};
