use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use maskfed_core::SyncState;

use super::{ClientError, RetryPolicy};
use crate::api::{JoinRequest, ProjectInfo, HEADER_PROJECT, HEADER_TOKEN, HEADER_USERNAME};
use crate::transport::{Request, Transport};

/// Everything a joined participant needs to take part in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSession {
    pub username: String,
    pub project_id: String,
    pub token: String,
    pub server_url: String,
    pub compensator_url: String,
    pub info: ProjectInfo,
    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    pub sync: SyncState,
}

impl ClientSession {
    /// Adds the training-time authentication headers.
    pub fn authorize(&self, request: Request) -> Request {
        request
            .with_header(HEADER_USERNAME, &self.username)
            .with_header(HEADER_PROJECT, &self.project_id)
            .with_header(HEADER_TOKEN, &self.token)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, text)
    }

    pub fn load(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let text = std::fs::read(path)?;
        serde_json::from_slice(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Joins `project_id`, then asks `consent` whether to proceed.
///
/// The only request sent is the join itself; declining leaves nothing else
/// on the wire.
pub fn join_flow(
    transport: &dyn Transport,
    retry: RetryPolicy,
    server_url: &str,
    compensator_url: &str,
    project_id: &str,
    join: &JoinRequest,
    consent: &mut dyn FnMut(&ProjectInfo) -> bool,
) -> Result<ClientSession, ClientError> {
    let request = Request::post_json(format!("/projects/{project_id}/join"), join)?;
    let response = retry.send(transport, server_url, &request)?;
    if !response.is_success() {
        return Err(ClientError::from_response(&response));
    }
    let info: ProjectInfo = response.parse()?;
    if !consent(&info) {
        return Err(ClientError::UserDeclined);
    }
    Ok(ClientSession {
        username: join.username.clone(),
        project_id: project_id.to_owned(),
        token: join.token.clone(),
        server_url: server_url.to_owned(),
        compensator_url: compensator_url.to_owned(),
        info,
        dataset_path: None,
        sync: SyncState::initial(),
    })
}
