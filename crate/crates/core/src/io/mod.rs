//! Configuration, CSV ingestion and run orchestration.

pub mod config;
pub mod data;
pub mod pipeline;

pub use config::{MissingPolicy, RunConfig, SigmaTiming};
pub use data::{load_and_validate, LoadedData, Provenance, RawTable};
pub use pipeline::{dry_run, estimate, irf_from_stores, run_sbc, run_studies, EstimateOutputs, SpecSummary};
