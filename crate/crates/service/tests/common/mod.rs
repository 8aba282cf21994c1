#![allow(dead_code)]

use std::sync::Arc;

use maskfed_service::api::{CreateProject, Credentials, JoinRequest, ProjectCreated, SessionToken, TokenList};
use maskfed_service::clock::ManualClock;
use maskfed_service::server::{CoordinationServer, MemoryStorage, ServerConfig, ServerHandler, Storage};
use maskfed_service::{Handler, Request, Response};

pub const SERVER_URL: &str = "http://server.test";
pub const COMPENSATOR_URL: &str = "http://compensator.test";

pub struct Fixture {
    pub server: Arc<CoordinationServer>,
    pub handler: ServerHandler,
    pub clock: Arc<ManualClock>,
}

impl Fixture {
    pub fn new() -> Self {
        Self::with_storage(Box::new(MemoryStorage::new()))
    }

    pub fn with_storage(storage: Box<dyn Storage>) -> Self {
        let clock = Arc::new(ManualClock::new(1_000));
        let config = ServerConfig { seed: Some(11), round_timeout_ms: 60_000, ..ServerConfig::default() };
        let server = Arc::new(CoordinationServer::with_parts(config, clock.clone(), storage).unwrap());
        Fixture { handler: ServerHandler::new(server.clone()), server, clock }
    }

    pub fn call(&self, request: Request) -> Response {
        self.handler.handle(&request)
    }

    pub fn post<T: serde::Serialize>(&self, path: &str, body: &T) -> Response {
        self.call(Request::post_json(path, body).unwrap())
    }

    pub fn signup(&self, username: &str) {
        let r = self.post("/auth/signup", &creds(username));
        assert_eq!(r.status, 201, "{}", String::from_utf8_lossy(&r.body));
    }

    pub fn login(&self, username: &str) -> String {
        self.post("/auth/login", &creds(username)).parse::<SessionToken>().unwrap().session
    }

    pub fn create(&self, session: &str, k: u32) -> Response {
        self.call(
            Request::post_json("/projects", &draft(k))
                .unwrap()
                .with_header("authorization", format!("Bearer {session}")),
        )
    }

    pub fn tokens(&self, session: &str, project: &str, count: u32) -> Response {
        self.call(
            Request::post(format!("/projects/{project}/tokens"))
                .with_query("count", count.to_string())
                .with_header("authorization", format!("Bearer {session}")),
        )
    }

    pub fn join(&self, project: &str, username: &str, token: &str) -> Response {
        let join = JoinRequest { username: username.into(), password: password(username), token: token.into() };
        self.post(&format!("/projects/{project}/join"), &join)
    }

    /// A coordinator plus `k` joined participants `p0..pk`.
    pub fn running_project(&self, k: u32) -> Project {
        self.signup("coord");
        let session = self.login("coord");
        let id = self.create(&session, k).parse::<ProjectCreated>().unwrap().project_id;
        let tokens = self.tokens(&session, &id, k).parse::<TokenList>().unwrap().tokens;
        let mut members = Vec::new();
        for (i, token) in tokens.into_iter().enumerate() {
            let name = format!("p{i}");
            self.signup(&name);
            assert_eq!(self.join(&id, &name, &token).status, 200);
            members.push((name, token));
        }
        Project { id, session, members }
    }
}

pub struct Project {
    pub id: String,
    pub session: String,
    pub members: Vec<(String, String)>,
}

impl Project {
    pub fn as_member(&self, i: usize, request: Request) -> Request {
        let (user, token) = &self.members[i];
        request
            .with_header("x-username", user)
            .with_header("x-project-id", &self.id)
            .with_header("x-token", token)
    }

    pub fn as_coordinator(&self, request: Request) -> Request {
        request.with_header("authorization", format!("Bearer {}", self.session))
    }
}

pub fn password(username: &str) -> String {
    format!("pw-{username}")
}

pub fn creds(username: &str) -> Credentials {
    Credentials { username: username.into(), password: password(username) }
}

pub fn draft(k: u32) -> CreateProject {
    CreateProject {
        name: "variance demo".into(),
        description: "population variance".into(),
        tool: "maskfed".into(),
        algorithm: "variance".into(),
        hyperparameters: Default::default(),
        participant_count: k,
        modulus: None,
        noise_variance: None,
    }
}

pub fn error_code(response: &Response) -> String {
    response.error_body().map(|b| b.error).unwrap_or_else(|| format!("HTTP {}", response.status))
}
