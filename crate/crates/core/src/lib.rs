//! Core building blocks for masked federated aggregation.
//!
//! Clients split every sensitive local parameter into a noise share and a
//! masked value. Noise shares go to a compensator which only ever forwards
//! their sum; masked values go to the coordination server. The server adds
//! the masked values and subtracts the aggregated noise, recovering the
//! exact global aggregate without seeing any individual contribution.
//!
//! This crate holds everything that is independent of transport:
//!
//! * [`masking`]: finite-field and Gaussian additive sharing, modulus bounds,
//!   and the leakage bound for the Gaussian path.
//! * [`protocol`]: parameter values, the canonical JSON wire codec, project
//!   steps and the synchronization check.
//! * [`identity`]: accounts, participant tokens and the hashed compensator
//!   identity.
//! * [`aggregation`]: server-side reconstruction of one aggregated parameter.
//! * [`algorithms`]: the client/server hook API and the reference federated
//!   variance algorithm.
//! * [`dataset`]: CSV ingestion for client datasets.

pub mod aggregation;
pub mod algorithms;
pub mod dataset;
pub mod identity;
pub mod masking;
pub mod par;
pub mod protocol;

pub use aggregation::{compute_aggregated_parameter, AggregationError, RoundBuffer, Submission};
pub use dataset::{load_dataset_csv, parse_dataset_csv, DatasetError, Table};
pub use masking::{
    FieldVector, GaussianSpec, MaskingError, PrimeModulus, RealVector, RngHandle, RngKind,
};
pub use protocol::{
    CompensatorFlagMap, DataType, ParameterMap, ParameterValue, ProjectConfig, ProjectStep,
    SyncState,
};
