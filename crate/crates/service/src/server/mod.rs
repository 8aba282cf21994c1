//! The coordination server: accounts, project lifecycle, round buffers and
//! global-model computation.
//!
//! Every mutation of one project happens under that project's mutex. The
//! identity store has its own lock and is never held while a project lock
//! is being acquired.

mod error;
pub mod record;
mod router;
pub mod storage;

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use maskfed_core::aggregation::{Compensation, Submission};
use maskfed_core::algorithms;
use maskfed_core::identity::{identity_from_roster, sha256_hex, IdentityStore};
use maskfed_core::masking::{GaussianSpec, PrimeModulus};
use maskfed_core::{ParameterValue, ProjectConfig};

pub use error::ServerError;
pub use record::{ProjectRecord, RoundProgress};
pub use storage::{FileStorage, MemoryStorage, Storage, StorageError};

use crate::api::{
    Ack, CompensationMessage, CreateProject, Credentials, GlobalState, JoinRequest, LocalSubmission,
    ParticipantState, ProjectCreated, ProjectInfo, ProjectStatus, SessionToken, StatusReport, TokenList,
};
use crate::clock::{Clock, SystemClock};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub round_timeout_ms: u64,
    /// Sync rejections tolerated per source and round before the project fails.
    pub sync_retry_budget: u32,
    pub default_modulus: PrimeModulus,
    pub default_noise: GaussianSpec,
    /// Seeds ids, tokens and salts. `None` draws from the OS.
    pub seed: Option<u64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            round_timeout_ms: 300_000,
            sync_retry_budget: 3,
            default_modulus: PrimeModulus::default(),
            default_noise: GaussianSpec::default(),
            seed: None,
        }
    }
}

/// A participant authenticated by username, project id and token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientAuth {
    pub username: String,
    pub project_id: String,
    pub token: String,
}

/// Who is asking for a read-only view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Viewer {
    Session(String),
    Participant(ClientAuth),
}

type Shared<T> = Arc<Mutex<T>>;

pub struct CoordinationServer {
    config: ServerConfig,
    clock: Arc<dyn Clock>,
    storage: Box<dyn Storage>,
    rng: Mutex<ChaCha20Rng>,
    identity: Mutex<IdentityStore>,
    sessions: Mutex<HashMap<String, String>>,
    projects: RwLock<BTreeMap<String, Shared<ProjectRecord>>>,
    by_hash: RwLock<HashMap<String, String>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl CoordinationServer {
    /// In-memory server on the system clock.
    pub fn new(config: ServerConfig) -> Self {
        Self::with_parts(config, Arc::new(SystemClock), Box::new(MemoryStorage::new()))
            .expect("memory storage never fails to load")
    }

    /// Restores whatever `storage` holds.
    pub fn with_parts(
        config: ServerConfig,
        clock: Arc<dyn Clock>,
        storage: Box<dyn Storage>,
    ) -> Result<Self, StorageError> {
        let snapshot = storage.load()?;
        let rng = match config.seed {
            Some(seed) => ChaCha20Rng::seed_from_u64(seed),
            None => ChaCha20Rng::from_os_rng(),
        };
        let mut projects = BTreeMap::new();
        let mut by_hash = HashMap::new();
        for record in snapshot.projects {
            by_hash.insert(sha256_hex(record.id()), record.id().to_owned());
            projects.insert(record.id().to_owned(), Arc::new(Mutex::new(record)));
        }
        Ok(CoordinationServer {
            config,
            clock,
            storage,
            rng: Mutex::new(rng),
            identity: Mutex::new(snapshot.identity),
            sessions: Mutex::new(HashMap::new()),
            projects: RwLock::new(projects),
            by_hash: RwLock::new(by_hash),
        })
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn project(&self, id: &str) -> Result<Shared<ProjectRecord>, ServerError> {
        self.projects
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or(ServerError::UnknownProject)
    }

    /// Accepts a project id or the hash of one.
    fn resolve(&self, key: &str) -> Result<String, ServerError> {
        if self.projects.read().unwrap_or_else(|e| e.into_inner()).contains_key(key) {
            return Ok(key.to_owned());
        }
        self.by_hash
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(key)
            .cloned()
            .ok_or(ServerError::UnknownProject)
    }

    fn persist(&self, record: &ProjectRecord) {
        if let Err(e) = self.storage.save_project(record) {
            log::error!("saving project {} failed: {e}", record.id());
        }
    }

    fn persist_identity(&self, store: &IdentityStore) -> Result<(), ServerError> {
        self.storage.save_identity(store).map_err(|e| {
            log::error!("saving identity store failed: {e}");
            ServerError::Internal
        })
    }

    fn random_hex(&self, bytes: usize) -> String {
        let mut buf = vec![0u8; bytes];
        lock(&self.rng).fill_bytes(&mut buf);
        buf.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn signup(&self, credentials: &Credentials) -> Result<(), ServerError> {
        if credentials.password.is_empty() {
            return Err(ServerError::BadRequest("password must not be empty".into()));
        }
        let mut identity = lock(&self.identity);
        let mut rng = lock(&self.rng);
        identity.signup(&credentials.username, &credentials.password, &mut *rng)?;
        drop(rng);
        self.persist_identity(&identity)
    }

    pub fn login(&self, credentials: &Credentials) -> Result<SessionToken, ServerError> {
        if !lock(&self.identity).verify_password(&credentials.username, &credentials.password) {
            return Err(ServerError::BadCredentials);
        }
        let session = self.random_hex(32);
        lock(&self.sessions).insert(session.clone(), credentials.username.clone());
        Ok(SessionToken { session })
    }

    pub fn session_user(&self, session: &str) -> Result<String, ServerError> {
        lock(&self.sessions).get(session).cloned().ok_or(ServerError::Unauthorized)
    }

    pub fn create_project(&self, session: &str, draft: CreateProject) -> Result<ProjectCreated, ServerError> {
        let coordinator = self.session_user(session)?;
        if !algorithms::is_registered(&draft.algorithm) {
            return Err(ServerError::InvalidConfig(format!("unknown algorithm {:?}", draft.algorithm)));
        }
        let mut id_bytes = [0u8; 16];
        lock(&self.rng).fill_bytes(&mut id_bytes);
        let id = uuid::Builder::from_random_bytes(id_bytes).into_uuid().to_string();
        let config = ProjectConfig {
            id: id.clone(),
            name: draft.name,
            description: draft.description,
            tool: draft.tool,
            algorithm: draft.algorithm,
            hyperparameters: draft.hyperparameters,
            participant_count: draft.participant_count,
            modulus: draft.modulus.unwrap_or(self.config.default_modulus),
            noise_variance: draft.noise_variance.unwrap_or(self.config.default_noise),
        };
        config.validate().map_err(|e| ServerError::InvalidConfig(e.to_string()))?;
        {
            let mut identity = lock(&self.identity);
            identity.register_project(&id, config.participant_count);
            self.persist_identity(&identity)?;
        }
        let record = ProjectRecord::new(config, coordinator);
        self.persist(&record);
        self.by_hash.write().unwrap_or_else(|e| e.into_inner()).insert(sha256_hex(&id), id.clone());
        self.projects.write().unwrap_or_else(|e| e.into_inner()).insert(id.clone(), Arc::new(Mutex::new(record)));
        log::info!("project {id} created");
        Ok(ProjectCreated { project_id: id })
    }

    fn require_coordinator(&self, session: &str, project_id: &str) -> Result<Shared<ProjectRecord>, ServerError> {
        let user = self.session_user(session)?;
        let project = self.project(project_id)?;
        if lock(&project).coordinator != user {
            return Err(ServerError::NotCoordinator);
        }
        Ok(project)
    }

    /// Issues `count` tokens, or all remaining ones when `count` is `None`.
    pub fn issue_tokens(&self, session: &str, project_id: &str, count: Option<u32>) -> Result<TokenList, ServerError> {
        self.require_coordinator(session, project_id)?;
        let mut identity = lock(&self.identity);
        let capacity = identity.capacity(project_id).ok_or(ServerError::UnknownProject)?;
        let remaining = capacity - identity.tokens(project_id).len() as u32;
        let count = count.unwrap_or(remaining);
        if count > remaining {
            return Err(ServerError::RosterFull);
        }
        let mut rng = lock(&self.rng);
        let tokens = (0..count)
            .map(|_| identity.issue_token(project_id, &mut *rng).map(|t| t.token))
            .collect::<Result<Vec<_>, _>>()?;
        drop(rng);
        self.persist_identity(&identity)?;
        Ok(TokenList { tokens })
    }

    pub fn join(&self, project_id: &str, join: &JoinRequest) -> Result<ProjectInfo, ServerError> {
        let project = self.project(project_id)?;
        let bound = {
            let mut identity = lock(&self.identity);
            let grant = identity.authenticate(&join.username, project_id, &join.token, Some(&join.password))?;
            if grant.newly_bound {
                self.persist_identity(&identity)?;
            }
            identity.roster(project_id).len()
        };
        let mut record = lock(&project);
        if bound == record.participants() && record.status == ProjectStatus::Created {
            record.start(self.now());
            self.persist(&record);
            log::info!("project {project_id} roster complete");
        }
        Ok(info_of(&record))
    }

    fn authenticate_client(&self, auth: &ClientAuth, project_id: &str) -> Result<(), ServerError> {
        if auth.project_id != project_id {
            return Err(ServerError::NotParticipant);
        }
        match lock(&self.identity).authenticate(&auth.username, project_id, &auth.token, None) {
            Ok(_) => Ok(()),
            Err(maskfed_core::identity::IdentityError::UnknownProject) => Err(ServerError::UnknownProject),
            Err(_) => Err(ServerError::NotParticipant),
        }
    }

    fn authorize_viewer(&self, viewer: &Viewer, project_id: &str) -> Result<Shared<ProjectRecord>, ServerError> {
        let project = self.project(project_id)?;
        match viewer {
            Viewer::Participant(auth) => self.authenticate_client(auth, project_id)?,
            Viewer::Session(session) => {
                let user = self.session_user(session)?;
                let is_coordinator = lock(&project).coordinator == user;
                let on_roster = lock(&self.identity).roster(project_id).iter().any(|(u, _)| *u == user);
                if !is_coordinator && !on_roster {
                    return Err(ServerError::NotParticipant);
                }
            }
        }
        Ok(project)
    }

    pub fn info(&self, viewer: &Viewer, project_id: &str) -> Result<ProjectInfo, ServerError> {
        let project = self.authorize_viewer(viewer, project_id)?;
        let record = lock(&project);
        Ok(info_of(&record))
    }

    pub fn fetch_global(&self, auth: &ClientAuth, project_id: &str) -> Result<GlobalState, ServerError> {
        self.sweep_timeouts();
        self.authenticate_client(auth, project_id)?;
        let project = self.project(project_id)?;
        let record = lock(&project);
        if matches!(record.status, ProjectStatus::Failed | ProjectStatus::Aborted) {
            return Err(ServerError::ProjectNotRunning(format!("{:?}", record.status)));
        }
        Ok(GlobalState {
            status: record.status,
            sync: record.sync.clone(),
            globals: record.global_parameters.clone(),
        })
    }

    /// Common gate for anything that feeds the current round.
    fn check_round(
        &self,
        record: &mut ProjectRecord,
        source: &str,
        sync: &maskfed_core::SyncState,
    ) -> Result<(), ServerError> {
        match record.status {
            ProjectStatus::Running => {}
            ProjectStatus::Created => return Err(ServerError::NotReady),
            other => return Err(ServerError::ProjectNotRunning(format!("{other:?}"))),
        }
        if *sync != record.sync {
            let err = ServerError::SyncMismatch { expected: record.sync.to_string(), found: sync.to_string() };
            if record.note_sync_rejection(source, self.config.sync_retry_budget) {
                record.fail(format!("{source} exceeded the sync retry budget"));
                log::warn!("project {} failed: {source} kept sending {sync}", record.id());
            }
            self.persist(record);
            return Err(err);
        }
        Ok(())
    }

    pub fn submit_local(&self, auth: &ClientAuth, project_id: &str, local: LocalSubmission) -> Result<Ack, ServerError> {
        self.sweep_timeouts();
        self.authenticate_client(auth, project_id)?;
        let project = self.project(project_id)?;
        let mut record = lock(&project);
        self.check_round(&mut record, &auth.username, &local.sync)?;
        if record.buffer.submissions.contains_key(&auth.username) {
            return Err(ServerError::DuplicateSubmission);
        }
        let p = record.config.modulus.value();
        for (name, dtype) in &local.flags {
            match local.masked.get(name) {
                Some(v) if v.data_type() == *dtype => {}
                Some(_) => return Err(ServerError::TypeMismatch(format!("{name} does not match its flag"))),
                None => return Err(ServerError::TypeMismatch(format!("flagged {name} is missing"))),
            }
        }
        for (name, value) in &local.masked {
            if let ParameterValue::NonNegInt(v) = value {
                if *v < 0 || *v >= p {
                    return Err(ServerError::TypeMismatch(format!("{name} is outside the field")));
                }
            }
        }
        if let Some(other) = record.buffer.submissions.values().next() {
            if other.flags != local.flags {
                return Err(ServerError::FlagDisagreement);
            }
        }
        if let Some(c) = &record.buffer.compensation {
            check_noise_matches_flags(&c.noise, &local.flags)?;
        }
        let submission = Submission { sync: local.sync, parameters: local.masked, flags: local.flags };
        let progress = record.add_submission(&auth.username, submission, self.now());
        log_progress(&record, &progress);
        self.persist(&record);
        Ok(Ack::OK)
    }

    /// `key` is the project id or its hash; the compensator only knows the latter.
    pub fn submit_compensation(&self, key: &str, message: CompensationMessage) -> Result<Ack, ServerError> {
        self.sweep_timeouts();
        let project_id = self.resolve(key)?;
        let expected = {
            let identity = lock(&self.identity);
            identity_from_roster(&project_id, identity.roster(&project_id)).map_err(|_| ServerError::IdentityMismatch)?
        };
        if expected != message.identity {
            return Err(ServerError::IdentityMismatch);
        }
        let project = self.project(&project_id)?;
        let mut record = lock(&project);
        self.check_round(&mut record, "compensator", &message.sync)?;
        if record.buffer.compensation.is_some() {
            return Err(ServerError::DuplicateCompensation);
        }
        if let Some(first) = record.buffer.submissions.values().next() {
            check_noise_matches_flags(&message.noise, &first.flags)?;
        }
        let compensation = Compensation { identity: message.identity, sync: message.sync, noise: message.noise };
        let progress = record.add_compensation(compensation, self.now());
        log_progress(&record, &progress);
        self.persist(&record);
        Ok(Ack::OK)
    }

    pub fn result(&self, viewer: &Viewer, project_id: &str) -> Result<Vec<u8>, ServerError> {
        let project = self.authorize_viewer(viewer, project_id)?;
        let record = lock(&project);
        record.result_payload.clone().ok_or(ServerError::ResultNotReady)
    }

    pub fn status(&self, viewer: &Viewer, project_id: &str) -> Result<StatusReport, ServerError> {
        self.sweep_timeouts();
        let project = self.authorize_viewer(viewer, project_id)?;
        let (mut roster, issued) = {
            let identity = lock(&self.identity);
            let roster: Vec<String> = identity.roster(project_id).into_iter().map(|(u, _)| u.to_owned()).collect();
            (roster, identity.tokens(project_id).len() as u32)
        };
        roster.sort();
        let record = lock(&project);
        Ok(StatusReport {
            project_id: project_id.to_owned(),
            name: record.config.name.clone(),
            algorithm: record.config.algorithm.clone(),
            status: record.status,
            sync: record.sync.clone(),
            participant_count: record.config.participant_count,
            tokens_issued: issued,
            participants: roster
                .into_iter()
                .map(|username| ParticipantState {
                    submitted: record.buffer.submissions.contains_key(&username),
                    username,
                })
                .collect(),
            result_available: record.result_payload.is_some(),
            failure: record.failure.clone(),
        })
    }

    pub fn abort(&self, session: &str, project_id: &str) -> Result<StatusReport, ServerError> {
        let project = self.require_coordinator(session, project_id)?;
        {
            let mut record = lock(&project);
            if !record.transition(ProjectStatus::Aborted) {
                return Err(ServerError::ProjectNotRunning(format!("{:?}", record.status)));
            }
            self.persist(&record);
        }
        self.status(&Viewer::Session(session.to_owned()), project_id)
    }

    /// Fails every running project whose round has outlived the timeout.
    /// Returns the ids that were failed.
    pub fn sweep_timeouts(&self) -> Vec<String> {
        let now = self.now();
        let projects: Vec<Shared<ProjectRecord>> =
            self.projects.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect();
        let mut failed = Vec::new();
        for project in projects {
            let mut record = lock(&project);
            if record.timed_out(now, self.config.round_timeout_ms) {
                record.fail("round timed out");
                log::warn!("project {} failed: round {} timed out", record.id(), record.sync.round);
                self.persist(&record);
                failed.push(record.id().to_owned());
            }
        }
        failed
    }

    /// Test and fault-injection hook: overwrite one stored participant token.
    #[doc(hidden)]
    pub fn tamper_token(&self, project_id: &str, index: usize, token: &str) {
        lock(&self.identity).tamper_token(project_id, index, token);
    }

    /// Snapshot of one project's record.
    pub fn record(&self, project_id: &str) -> Option<ProjectRecord> {
        self.project(project_id).ok().map(|p| lock(&p).clone())
    }
}

fn info_of(record: &ProjectRecord) -> ProjectInfo {
    let c = &record.config;
    ProjectInfo {
        id: c.id.clone(),
        name: c.name.clone(),
        description: c.description.clone(),
        tool: c.tool.clone(),
        algorithm: c.algorithm.clone(),
        hyperparameters: c.hyperparameters.clone(),
        participant_count: c.participant_count,
        modulus: c.modulus,
        noise_variance: c.noise_variance,
        coordinator: record.coordinator.clone(),
    }
}

fn check_noise_matches_flags(
    noise: &maskfed_core::ParameterMap,
    flags: &maskfed_core::CompensatorFlagMap,
) -> Result<(), ServerError> {
    let matches = noise.len() == flags.len()
        && noise.iter().all(|(name, v)| flags.get(name) == Some(&v.data_type()));
    if matches {
        Ok(())
    } else {
        Err(ServerError::TypeMismatch("aggregated noise does not match the flagged parameters".into()))
    }
}

fn log_progress(record: &ProjectRecord, progress: &RoundProgress) {
    match progress {
        RoundProgress::Pending => {}
        RoundProgress::Advanced(sync) => log::info!("project {} advanced to {sync}", record.id()),
        RoundProgress::Failed(reason) => log::warn!("project {} failed: {reason}", record.id()),
    }
}

pub use router::ServerHandler;
