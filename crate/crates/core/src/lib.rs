//! Bayesian smooth-transition vector autoregression (ST-VAR).
//!
//! Two VAR regimes are blended by a logistic function of a lagged,
//! standardized signal variable. Both regimes carry a horseshoe prior that
//! pools them toward a common mean, which in turn is shrunk toward a
//! Minnesota-style anchor. A scalar external instrument enters each regime
//! exogenously and its loading identifies the structural shock, from which
//! time-varying impulse responses are computed.
//!
//! Module map:
//!
//! * [`model`] – structural objects: transition function, regressor layout,
//!   companion matrices, stability.
//! * [`priors`] – horseshoe hierarchies, variance and transition priors.
//! * [`sampler`] – the Metropolis-within-Gibbs sampler and draw storage.
//! * [`instruments`] – series transformations, signal detrending, instrument
//!   purging.
//! * [`irf`] – impulse-response surfaces and credible-set summaries.
//! * [`io`] – configuration, CSV ingestion and run orchestration.
//! * [`synth`] – synthetic data, independent oracles and simulation-based
//!   calibration.

pub mod date;
pub mod dist;
pub mod error;
pub mod instruments;
pub mod io;
pub mod irf;
pub mod model;
pub mod priors;
pub mod sampler;
pub mod synth;

pub use date::YearMonth;
pub use error::{Error, Result};
pub use model::{
    CompanionPair, InstrumentSeries, ModelSpec, RegimeCoefficients, ShockTag, SignalSeries,
    TimeSeriesPanel, TransitionState,
};
