#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use maskfed_core::{ParameterMap, SyncState, Table};
use maskfed_service::api::{
    Ack, CompensationMessage, CreateProject, Credentials, JoinRequest, LocalSubmission,
};
use maskfed_service::clock::ManualClock;
use maskfed_service::server::{ClientAuth, CoordinationServer, MemoryStorage, ServerConfig, ServerError};

/// `k` partitions with 1..=max_rows rows each and `columns` columns of
/// two-decimal values in [-500, 500).
pub fn random_partitions(rng: &mut ChaCha8Rng, k: usize, max_rows: usize, columns: usize) -> Vec<Table> {
    (0..k)
        .map(|_| {
            let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=max_rows))
                .map(|_| (0..columns).map(|_| f64::from(rng.random_range(-50_000..50_000)) / 100.0).collect())
                .collect();
            Table::from_rows(columns, &rows)
        })
        .collect()
}

/// `{A:[1,2], B:[3,4], C:[5]}`.
pub fn small_partitions() -> Vec<Table> {
    vec![Table::from_column(vec![1.0, 2.0]), Table::from_column(vec![3.0, 4.0]), Table::from_column(vec![5.0])]
}

/// A coordination server driven through its operations directly.
pub struct ServerFixture {
    pub server: Arc<CoordinationServer>,
    pub project_id: String,
    pub members: Vec<(String, String)>,
}

impl ServerFixture {
    /// A running project with `k` joined members `m0..`.
    pub fn running(k: u32) -> Self {
        let clock = Arc::new(ManualClock::new(0));
        let config = ServerConfig { seed: Some(5), ..ServerConfig::default() };
        let server =
            Arc::new(CoordinationServer::with_parts(config, clock, Box::new(MemoryStorage::new())).unwrap());
        let coord = Credentials { username: "coord".into(), password: "pw-coord".into() };
        server.signup(&coord).unwrap();
        let session = server.login(&coord).unwrap().session;
        let draft = CreateProject {
            name: "fixture".into(),
            description: String::new(),
            tool: String::new(),
            algorithm: "variance".into(),
            hyperparameters: ParameterMap::new(),
            participant_count: k,
            modulus: None,
            noise_variance: None,
        };
        let project_id = server.create_project(&session, draft).unwrap().project_id;
        let tokens = server.issue_tokens(&session, &project_id, None).unwrap().tokens;
        let mut members = Vec::new();
        for (i, token) in tokens.into_iter().enumerate() {
            let username = format!("m{i}");
            let password = format!("pw-{username}");
            server.signup(&Credentials { username: username.clone(), password: password.clone() }).unwrap();
            server.join(&project_id, &JoinRequest { username: username.clone(), password, token: token.clone() }).unwrap();
            members.push((username, token));
        }
        ServerFixture { server, project_id, members }
    }

    pub fn auth(&self, i: usize) -> ClientAuth {
        let (username, token) = &self.members[i];
        ClientAuth { username: username.clone(), project_id: self.project_id.clone(), token: token.clone() }
    }

    pub fn submit(&self, i: usize, sync: SyncState) -> Result<Ack, ServerError> {
        let local = LocalSubmission { sync, masked: ParameterMap::new(), flags: Default::default() };
        self.server.submit_local(&self.auth(i), &self.project_id, local)
    }

    /// Every member submits nothing for `Init`, moving the project to round 1.
    pub fn finish_init(&self) {
        for i in 0..self.members.len() {
            self.submit(i, SyncState::initial()).unwrap();
        }
    }

    pub fn compensate(&self, message: CompensationMessage) -> Result<Ack, ServerError> {
        let key = maskfed_core::identity::sha256_hex(&self.project_id);
        self.server.submit_compensation(&key, message)
    }
}
