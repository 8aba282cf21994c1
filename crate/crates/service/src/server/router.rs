//! Maps REST requests onto [`CoordinationServer`] operations.

use std::sync::Arc;

use serde::de::DeserializeOwned;

use super::{ClientAuth, CoordinationServer, ServerError, Viewer};
use crate::api::{HEADER_PROJECT, HEADER_TOKEN, HEADER_USERNAME};
use crate::transport::{Handler, Method, Request, Response};

#[derive(Clone)]
pub struct ServerHandler {
    server: Arc<CoordinationServer>,
}

impl ServerHandler {
    pub fn new(server: Arc<CoordinationServer>) -> Self {
        ServerHandler { server }
    }

    pub fn server(&self) -> &Arc<CoordinationServer> {
        &self.server
    }
}

fn body<T: DeserializeOwned>(request: &Request) -> Result<T, ServerError> {
    request.json().map_err(|e| ServerError::BadRequest(e.to_string()))
}

fn session(request: &Request) -> Result<&str, ServerError> {
    request
        .header("authorization")
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or(ServerError::Unauthorized)
}

fn client_auth(request: &Request) -> Option<ClientAuth> {
    Some(ClientAuth {
        username: request.header(HEADER_USERNAME)?.to_owned(),
        project_id: request.header(HEADER_PROJECT)?.to_owned(),
        token: request.header(HEADER_TOKEN)?.to_owned(),
    })
}

fn require_client(request: &Request) -> Result<ClientAuth, ServerError> {
    client_auth(request).ok_or(ServerError::NotParticipant)
}

fn viewer(request: &Request) -> Result<Viewer, ServerError> {
    if let Ok(s) = session(request) {
        return Ok(Viewer::Session(s.to_owned()));
    }
    client_auth(request).map(Viewer::Participant).ok_or(ServerError::Unauthorized)
}

impl ServerHandler {
    fn route(&self, request: &Request) -> Result<Response, ServerError> {
        let s = &self.server;
        let segments = request.segments();
        match (request.method, segments.as_slice()) {
            (Method::Get, ["health"]) => Ok(Response::ok(&serde_json::json!({"ok": true}))),
            (Method::Post, ["auth", "signup"]) => {
                s.signup(&body(request)?)?;
                Ok(Response::json(201, &crate::api::Ack::OK))
            }
            (Method::Post, ["auth", "login"]) => Ok(Response::ok(&s.login(&body(request)?)?)),
            (Method::Post, ["projects"]) => Ok(Response::json(201, &s.create_project(session(request)?, body(request)?)?)),
            (Method::Post, ["projects", id, "tokens"]) => {
                let count = match request.query_param("count") {
                    Some(c) => Some(c.parse::<u32>().map_err(|_| ServerError::BadRequest("count must be a number".into()))?),
                    None => None,
                };
                Ok(Response::json(201, &s.issue_tokens(session(request)?, id, count)?))
            }
            (Method::Post, ["projects", id, "join"]) => Ok(Response::ok(&s.join(id, &body(request)?)?)),
            (Method::Get, ["projects", id, "info"]) => Ok(Response::ok(&s.info(&viewer(request)?, id)?)),
            (Method::Get, ["projects", id, "global"]) => Ok(Response::ok(&s.fetch_global(&require_client(request)?, id)?)),
            (Method::Post, ["projects", id, "local"]) => {
                Ok(Response::ok(&s.submit_local(&require_client(request)?, id, body(request)?)?))
            }
            (Method::Post, ["projects", key, "compensation"]) => Ok(Response::ok(&s.submit_compensation(key, body(request)?)?)),
            (Method::Get, ["projects", id, "result"]) => {
                Ok(Response::bytes(200, "application/octet-stream", s.result(&viewer(request)?, id)?))
            }
            (Method::Get, ["projects", id, "status"]) => Ok(Response::ok(&s.status(&viewer(request)?, id)?)),
            (Method::Post, ["projects", id, "abort"]) => Ok(Response::ok(&s.abort(session(request)?, id)?)),
            _ => Err(ServerError::NotFound),
        }
    }
}

impl Handler for ServerHandler {
    fn handle(&self, request: &Request) -> Response {
        self.route(request).unwrap_or_else(|e| e.to_response())
    }
}
