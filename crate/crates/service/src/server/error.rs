use thiserror::Error;

use maskfed_core::identity::IdentityError;

use crate::transport::Response;

/// Rejections surfaced to callers. Messages name the failure class only.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ServerError {
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("missing or invalid session")]
    Unauthorized,
    #[error("bad credentials")]
    BadCredentials,
    #[error("username already taken")]
    UsernameTaken,
    #[error("token already bound")]
    TokenAlreadyBound,
    #[error("unknown project")]
    UnknownProject,
    #[error("not a participant of this project")]
    NotParticipant,
    #[error("only the coordinator may do this")]
    NotCoordinator,
    #[error("roster is full")]
    RosterFull,
    #[error("invalid project configuration: {0}")]
    InvalidConfig(String),
    #[error("project is waiting for participants")]
    NotReady,
    #[error("project is {0}")]
    ProjectNotRunning(String),
    #[error("expected {expected}, got {found}")]
    SyncMismatch { expected: String, found: String },
    #[error("already submitted for this round")]
    DuplicateSubmission,
    #[error("compensation already received for this round")]
    DuplicateCompensation,
    #[error("compensator identity does not match the roster")]
    IdentityMismatch,
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("clients disagree on the compensator flags")]
    FlagDisagreement,
    #[error("no result available yet")]
    ResultNotReady,
    #[error("not found")]
    NotFound,
    #[error("internal error")]
    Internal,
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::BadRequest(_) => "BadRequest",
            ServerError::Unauthorized => "Unauthorized",
            ServerError::BadCredentials => "BadCredentials",
            ServerError::UsernameTaken => "UsernameTaken",
            ServerError::TokenAlreadyBound => "TokenAlreadyBound",
            ServerError::UnknownProject => "UnknownProject",
            ServerError::NotParticipant => "NotParticipant",
            ServerError::NotCoordinator => "NotCoordinator",
            ServerError::RosterFull => "RosterFull",
            ServerError::InvalidConfig(_) => "InvalidConfig",
            ServerError::NotReady => "NotReady",
            ServerError::ProjectNotRunning(_) => "ProjectNotRunning",
            ServerError::SyncMismatch { .. } => "SyncMismatch",
            ServerError::DuplicateSubmission => "DuplicateSubmission",
            ServerError::DuplicateCompensation => "DuplicateCompensation",
            ServerError::IdentityMismatch => "IdentityMismatch",
            ServerError::TypeMismatch(_) => "TypeMismatch",
            ServerError::FlagDisagreement => "FlagDisagreement",
            ServerError::ResultNotReady => "ResultNotReady",
            ServerError::NotFound => "NotFound",
            ServerError::Internal => "Internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServerError::BadRequest(_) | ServerError::InvalidConfig(_) | ServerError::TypeMismatch(_) => 400,
            ServerError::FlagDisagreement => 400,
            ServerError::Unauthorized | ServerError::BadCredentials => 401,
            ServerError::NotParticipant | ServerError::NotCoordinator | ServerError::IdentityMismatch => 403,
            ServerError::UnknownProject | ServerError::ResultNotReady | ServerError::NotFound => 404,
            ServerError::Internal => 500,
            _ => 409,
        }
    }

    pub fn to_response(&self) -> Response {
        Response::error(self.status(), self.code(), &self.to_string())
    }
}

impl From<IdentityError> for ServerError {
    fn from(e: IdentityError) -> Self {
        match e {
            IdentityError::BadCredentials => ServerError::BadCredentials,
            IdentityError::TokenAlreadyBound => ServerError::TokenAlreadyBound,
            IdentityError::UnknownProject => ServerError::UnknownProject,
            IdentityError::RosterFull => ServerError::RosterFull,
            IdentityError::UsernameTaken => ServerError::UsernameTaken,
            IdentityError::EmptyUsername => ServerError::BadRequest("username must not be empty".into()),
            IdentityError::MalformedHash => ServerError::BadRequest("malformed hash".into()),
        }
    }
}
