use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use maskfed_core::algorithms::{self, ClientAlgorithm, ClientContext};
use maskfed_core::identity::sha256_hex;
use maskfed_core::masking::RngHandle;
use maskfed_core::{ParameterMap, SyncState, Table};

use super::{mask_parameters, ClientError, ClientSession, RetryPolicy};
use crate::api::{GlobalState, LocalSubmission, NoiseEnvelope, ProjectStatus, StatusReport};
use crate::transport::{Request, Transport};

/// What one call to [`ClientRuntime::poll`] achieved.
#[derive(Debug, Clone, PartialEq)]
pub enum Progress {
    /// Nothing to do until the server moves on.
    Waiting,
    /// Local parameters for this round were delivered.
    Submitted(SyncState),
    Finished,
    /// The project ended without finishing.
    Stopped(ProjectStatus),
}

/// Observes each round's raw local parameters before masking.
#[cfg(feature = "sim-hooks")]
pub type RawTap = Box<dyn FnMut(&SyncState, &ParameterMap) + Send>;

#[cfg(feature = "sim-hooks")]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClientFault {
    /// Also post every noise envelope to the server.
    NoiseToServer,
}

pub struct ClientRuntime {
    session: ClientSession,
    transport: Arc<dyn Transport>,
    algorithm: Arc<dyn ClientAlgorithm>,
    data: Table,
    rng: RngHandle,
    masking: bool,
    retry: RetryPolicy,
    sync_budget: u32,
    sync_rejections: u32,
    last_submitted: Option<SyncState>,
    result: Option<Vec<u8>>,
    result_dir: Option<PathBuf>,
    #[cfg(feature = "sim-hooks")]
    fault: Option<ClientFault>,
    #[cfg(feature = "sim-hooks")]
    raw_tap: Option<RawTap>,
}

impl ClientRuntime {
    pub fn new(
        session: ClientSession,
        transport: Arc<dyn Transport>,
        data: Table,
        rng: RngHandle,
    ) -> Result<Self, ClientError> {
        let algorithm = algorithms::client_algorithm(&session.info.algorithm)
            .ok_or_else(|| ClientError::UnknownAlgorithm(session.info.algorithm.clone()))?;
        Ok(ClientRuntime {
            session,
            transport,
            algorithm,
            data,
            rng,
            masking: true,
            retry: RetryPolicy::default(),
            sync_budget: 3,
            sync_rejections: 0,
            last_submitted: None,
            result: None,
            result_dir: None,
            #[cfg(feature = "sim-hooks")]
            fault: None,
            #[cfg(feature = "sim-hooks")]
            raw_tap: None,
        })
    }

    /// Debug mode: send every parameter to the server in clear, unflagged.
    pub fn with_masking(mut self, masking: bool) -> Self {
        self.masking = masking;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_sync_budget(mut self, budget: u32) -> Self {
        self.sync_budget = budget;
        self
    }

    /// Where the result file is written once downloaded.
    pub fn with_result_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.result_dir = Some(dir.into());
        self
    }

    #[cfg(feature = "sim-hooks")]
    pub fn with_fault(mut self, fault: Option<ClientFault>) -> Self {
        self.fault = fault;
        self
    }

    #[cfg(feature = "sim-hooks")]
    pub fn with_raw_tap(mut self, tap: RawTap) -> Self {
        self.raw_tap = Some(tap);
        self
    }

    pub fn session(&self) -> &ClientSession {
        &self.session
    }

    pub fn result(&self) -> Option<&[u8]> {
        self.result.as_deref()
    }

    pub fn result_path(&self) -> Option<PathBuf> {
        self.result_dir.as_ref().map(|d| d.join(format!("result-{}.csv", self.session.project_id)))
    }

    fn server(&self, request: Request) -> Result<crate::transport::Response, ClientError> {
        let request = self.session.authorize(request);
        self.retry.send(&*self.transport, &self.session.server_url, &request)
    }

    pub fn fetch_global(&self) -> Result<GlobalState, ClientError> {
        let response = self.server(Request::get(format!("/projects/{}/global", self.session.project_id)))?;
        if !response.is_success() {
            return Err(ClientError::from_response(&response));
        }
        Ok(response.parse()?)
    }

    pub fn fetch_status(&self) -> Result<StatusReport, ClientError> {
        let response = self.server(Request::get(format!("/projects/{}/status", self.session.project_id)))?;
        if !response.is_success() {
            return Err(ClientError::from_response(&response));
        }
        Ok(response.parse()?)
    }

    fn download_result(&mut self) -> Result<(), ClientError> {
        if self.result.is_some() {
            return Ok(());
        }
        let response = self.server(Request::get(format!("/projects/{}/result", self.session.project_id)))?;
        if !response.is_success() {
            return Err(ClientError::from_response(&response));
        }
        if let Some(path) = self.result_path() {
            std::fs::write(&path, &response.body)?;
            log::info!("result written to {}", path.display());
        }
        self.result = Some(response.body);
        Ok(())
    }

    /// One fetch, and if the server is waiting on us, one submission.
    pub fn poll(&mut self) -> Result<Progress, ClientError> {
        let state = match self.fetch_global() {
            Ok(state) => state,
            Err(e) if e.code() == Some("ProjectNotRunning") => {
                let status = self.fetch_status().map_or(ProjectStatus::Failed, |s| s.status);
                return Ok(Progress::Stopped(status));
            }
            Err(e) => return Err(e),
        };
        self.session.sync = state.sync.clone();
        if state.status == ProjectStatus::Created {
            return Ok(Progress::Waiting);
        }
        if state.status == ProjectStatus::Done || state.sync.step.is_finished() {
            self.download_result()?;
            return Ok(Progress::Finished);
        }
        if self.last_submitted.as_ref() == Some(&state.sync) {
            return Ok(Progress::Waiting);
        }
        if state.sync.step.is_result() {
            self.download_result()?;
        }
        self.submit_round(&state)
    }

    fn submit_round(&mut self, state: &GlobalState) -> Result<Progress, ClientError> {
        let info = &self.session.info;
        let mut ctx = ClientContext::new(&state.sync.step, &state.globals, &info.hyperparameters, &self.data);
        self.algorithm.compute_local_parameters(&mut ctx)?;
        let (locals, mut flags) = ctx.into_parts();
        #[cfg(feature = "sim-hooks")]
        if let Some(tap) = self.raw_tap.as_mut() {
            tap(&state.sync, &locals);
        }
        if !self.masking {
            flags.clear();
        }
        let (masked, noise) = mask_parameters(&locals, &flags, info.modulus, info.noise_variance, &mut self.rng)?;
        drop(locals);

        if !noise.is_empty() {
            self.send_noise(state, noise)?;
        }
        let submission = LocalSubmission { sync: state.sync.clone(), masked, flags };
        let request = Request::post_json(format!("/projects/{}/local", self.session.project_id), &submission)?;
        let response = self.server(request)?;
        if !response.is_success() {
            let err = ClientError::from_response(&response);
            match err.code() {
                // An earlier attempt got through before its reply was lost.
                Some("DuplicateSubmission") => {}
                Some("SyncMismatch") => {
                    self.sync_rejections += 1;
                    if self.sync_rejections > self.sync_budget {
                        return Err(ClientError::SyncMismatch(state.sync.to_string()));
                    }
                    return Ok(Progress::Waiting);
                }
                _ => return Err(err),
            }
        }
        self.sync_rejections = 0;
        self.last_submitted = Some(state.sync.clone());
        Ok(Progress::Submitted(state.sync.clone()))
    }

    fn send_noise(&self, state: &GlobalState, noise: ParameterMap) -> Result<(), ClientError> {
        let s = &self.session;
        let envelope = NoiseEnvelope {
            project_hash: sha256_hex(&s.project_id),
            username_hash: sha256_hex(&s.username),
            token_hash: sha256_hex(&s.token),
            participant_count: s.info.participant_count,
            server_url: s.server_url.clone(),
            modulus: s.info.modulus,
            sync: state.sync.clone(),
            dtypes: noise.iter().map(|(k, v)| (k.clone(), v.data_type())).collect(),
            noise,
        };
        let request = Request::post_json("/noise", &envelope)?;
        #[cfg(feature = "sim-hooks")]
        if self.fault == Some(ClientFault::NoiseToServer) {
            let _ = self.transport.send(&s.server_url, &request);
        }
        let response = self.retry.send(&*self.transport, &s.compensator_url, &request)?;
        if !response.is_success() {
            let err = ClientError::from_response(&response);
            if err.code() != Some("DuplicateNoise") {
                return Err(err);
            }
        }
        Ok(())
    }

    /// Polls until the project ends, sleeping `interval` while waiting.
    pub fn run(&mut self, interval: Duration) -> Result<ProjectStatus, ClientError> {
        loop {
            match self.poll()? {
                Progress::Submitted(sync) => log::info!("submitted {sync}"),
                Progress::Waiting => std::thread::sleep(interval),
                Progress::Finished => return Ok(ProjectStatus::Done),
                Progress::Stopped(status) => return Ok(status),
            }
        }
    }
}
