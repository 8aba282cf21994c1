use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ParameterMap;
use crate::masking::{validate_modulus, GaussianSpec, PrimeModulus};

/// Fewer participants would let one client subtract its own share from
/// the aggregate and learn the other's contribution.
pub const MIN_PARTICIPANTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("a project needs at least {MIN_PARTICIPANTS} participants")]
    TooFewParticipants,
    #[error("modulus does not support this many participants: {0}")]
    BadModulus(String),
    #[error("unknown algorithm {0:?}")]
    UnknownAlgorithm(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub id: String,
    pub name: String,
    pub description: String,
    pub tool: String,
    pub algorithm: String,
    pub hyperparameters: ParameterMap,
    pub participant_count: u32,
    pub modulus: PrimeModulus,
    pub noise_variance: GaussianSpec,
}

impl ProjectConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.participant_count < MIN_PARTICIPANTS {
            return Err(ConfigError::TooFewParticipants);
        }
        validate_modulus(self.modulus, self.participant_count as u64)
            .map_err(|e| ConfigError::BadModulus(e.to_string()))
    }
}
