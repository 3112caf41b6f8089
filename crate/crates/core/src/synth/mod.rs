//! Synthetic data, independent oracles and simulation-based calibration.

pub mod generate;
pub mod oracle;
pub mod sbc;
pub mod validation;

pub use generate::{fixture_parameters, generate, SignalProcess, SyntheticData, TrueParameters};
pub use sbc::{sbc_procedure, SbcConfig, SbcReport};
