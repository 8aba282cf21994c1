//! JSON envelopes exchanged between parties. Parameter payloads inside them
//! use the core wire codec.

use serde::{Deserialize, Serialize};

use maskfed_core::identity::CompensatorIdentity;
use maskfed_core::{CompensatorFlagMap, GaussianSpec, ParameterMap, PrimeModulus, SyncState};

/// Client authentication headers used during training.
pub const HEADER_USERNAME: &str = "x-username";
pub const HEADER_PROJECT: &str = "x-project-id";
pub const HEADER_TOKEN: &str = "x-token";

/// Body of every non-2xx response: the failure class and a short message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub session: String,
}

/// Project draft submitted by a coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateProject {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub tool: String,
    pub algorithm: String,
    #[serde(default)]
    pub hyperparameters: ParameterMap,
    pub participant_count: u32,
    #[serde(default)]
    pub modulus: Option<PrimeModulus>,
    #[serde(default)]
    pub noise_variance: Option<GaussianSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectCreated {
    pub project_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenList {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinRequest {
    pub username: String,
    pub password: String,
    pub token: String,
}

/// What a participant sees before consenting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectInfo {
    pub id: String,
    pub name: String,
    pub description: String,
    pub tool: String,
    pub algorithm: String,
    pub hyperparameters: ParameterMap,
    pub participant_count: u32,
    pub modulus: PrimeModulus,
    pub noise_variance: GaussianSpec,
    pub coordinator: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProjectStatus {
    Created,
    Running,
    Aggregating,
    Done,
    Failed,
    Aborted,
}

impl ProjectStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, ProjectStatus::Done | ProjectStatus::Failed | ProjectStatus::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub status: ProjectStatus,
    pub sync: SyncState,
    pub globals: ParameterMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSubmission {
    pub sync: SyncState,
    pub masked: ParameterMap,
    #[serde(default)]
    pub flags: CompensatorFlagMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensationMessage {
    pub identity: CompensatorIdentity,
    pub sync: SyncState,
    pub noise: ParameterMap,
}

/// One client's noise for one round, addressed to the compensator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseEnvelope {
    pub project_hash: String,
    pub username_hash: String,
    pub token_hash: String,
    pub participant_count: u32,
    pub server_url: String,
    pub modulus: PrimeModulus,
    pub sync: SyncState,
    pub noise: ParameterMap,
    pub dtypes: CompensatorFlagMap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
}

impl Ack {
    pub const OK: Ack = Ack { accepted: true };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantState {
    pub username: String,
    pub submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub round: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub project_id: String,
    pub name: String,
    pub algorithm: String,
    pub status: ProjectStatus,
    pub sync: SyncState,
    pub participant_count: u32,
    pub tokens_issued: u32,
    pub participants: Vec<ParticipantState>,
    pub result_available: bool,
    pub failure: Option<Failure>,
}
