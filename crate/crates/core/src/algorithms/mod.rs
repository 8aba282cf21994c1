//! Algorithm hooks and the built-in algorithm registry.
//!
//! A federated algorithm is a pair of step functions. The client side turns
//! the local dataset and the current globals into local parameters, flagging
//! the sensitive ones for masking. The server side aggregates those
//! parameters, publishes new globals and picks the next step.

mod api;
pub mod variance;

use std::sync::Arc;

pub use api::{AlgorithmError, ClientAlgorithm, ClientContext, ServerAlgorithm, ServerContext};

/// Names accepted in `ProjectConfig::algorithm`.
pub const REGISTERED: &[&str] = &[variance::NAME];

pub fn is_registered(name: &str) -> bool {
    REGISTERED.contains(&name)
}

pub fn client_algorithm(name: &str) -> Option<Arc<dyn ClientAlgorithm>> {
    match name {
        variance::NAME => Some(Arc::new(variance::VarianceClient)),
        _ => None,
    }
}

pub fn server_algorithm(name: &str) -> Option<Arc<dyn ServerAlgorithm>> {
    match name {
        variance::NAME => Some(Arc::new(variance::VarianceServer)),
        _ => None,
    }
}
