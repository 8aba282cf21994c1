//! Participant side: joining a project, then running the fetch, compute,
//! mask and dispatch loop until the project finishes.

mod masking;
mod runtime;
mod session;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use maskfed_core::algorithms::AlgorithmError;
use maskfed_core::{DatasetError, MaskingError, RngKind};

pub use masking::mask_parameters;
pub use runtime::{ClientRuntime, Progress};
#[cfg(feature = "sim-hooks")]
pub use runtime::{ClientFault, RawTap};
pub use session::{join_flow, ClientSession};

use crate::transport::{Response, Transport, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("bad credentials")]
    BadCredentials,
    #[error("token already bound to another participant")]
    TokenAlreadyBound,
    #[error("unknown project")]
    UnknownProject,
    #[error("participation declined")]
    UserDeclined,
    #[error("{code}: {message}")]
    Rejected { code: String, message: String },
    #[error("server kept reporting a different round than ours ({0})")]
    SyncMismatch(String),
    #[error("parameter {name} = {value} does not fit the field (p = {modulus})")]
    ValueOutOfRange { name: String, value: i64, modulus: i64 },
    #[error("project uses algorithm {0:?}, which this client does not have")]
    UnknownAlgorithm(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Algorithm(#[from] AlgorithmError),
    #[error(transparent)]
    Masking(#[from] MaskingError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ClientError {
    /// Interprets a failure response from a peer.
    pub fn from_response(response: &Response) -> ClientError {
        let body = response.error_body();
        let code = body.as_ref().map_or_else(|| format!("HTTP {}", response.status), |b| b.error.clone());
        match code.as_str() {
            "BadCredentials" => ClientError::BadCredentials,
            "TokenAlreadyBound" => ClientError::TokenAlreadyBound,
            "UnknownProject" => ClientError::UnknownProject,
            _ => ClientError::Rejected { code, message: body.map(|b| b.message).unwrap_or_default() },
        }
    }

    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Rejected { code, .. } => Some(code),
            _ => None,
        }
    }
}

/// Retries for transport failures and 5xx answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { retries: 3, initial_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        RetryPolicy { retries: 0, initial_backoff: Duration::ZERO }
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt.saturating_sub(1))
    }

    /// Sends until a non-5xx answer arrives or retries run out.
    pub fn send(
        &self,
        transport: &dyn Transport,
        base_url: &str,
        request: &crate::transport::Request,
    ) -> Result<Response, ClientError> {
        let mut attempt = 0;
        loop {
            let outcome = transport.send(base_url, request);
            let retryable = match &outcome {
                Ok(r) => r.status >= 500,
                Err(TransportError::Unreachable(_)) => true,
                Err(_) => false,
            };
            if !retryable || attempt >= self.retries {
                return Ok(outcome?);
            }
            attempt += 1;
            log::debug!("retrying {} {} (attempt {attempt})", request.method.as_str(), request.path);
            std::thread::sleep(self.backoff(attempt));
        }
    }
}

/// Optional client configuration file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub server: Option<String>,
    pub compensator: Option<String>,
    pub seed: Option<u64>,
    pub rng: Option<RngKind>,
}

impl ClientConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}
