//! Transport-neutral request/response types and the outbound side of HTTP.
//!
//! Bodies are carried as the exact bytes that go on the wire, so an
//! in-memory transport and a socket see identical payloads.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::api::ErrorBody;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    /// Path without query string, starting with `/`.
    pub path: String,
    pub query: Vec<(String, String)>,
    /// Header names are lowercase.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
}

impl Request {
    pub fn new(method: Method, path: impl Into<String>) -> Self {
        Request {
            method,
            path: path.into(),
            query: Vec::new(),
            headers: BTreeMap::new(),
            body: Vec::new(),
        }
    }

    pub fn get(path: impl Into<String>) -> Self {
        Request::new(Method::Get, path)
    }

    pub fn post(path: impl Into<String>) -> Self {
        Request::new(Method::Post, path)
    }

    /// POST with a compact JSON body.
    pub fn post_json<T: Serialize + ?Sized>(path: impl Into<String>, body: &T) -> Result<Self, TransportError> {
        let body = serde_json::to_vec(body).map_err(|e| TransportError::Encode(e.to_string()))?;
        let mut request = Request::post(path);
        request.headers.insert("content-type".into(), "application/json".into());
        request.body = body;
        Ok(request)
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn with_query(mut self, name: &str, value: impl Into<String>) -> Self {
        self.query.push((name.to_owned(), value.into()));
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn query_param(&self, name: &str) -> Option<&str> {
        self.query.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    /// Path plus encoded query string.
    pub fn target(&self) -> String {
        if self.query.is_empty() {
            return self.path.clone();
        }
        let query = form_urlencoded::Serializer::new(String::new()).extend_pairs(&self.query).finish();
        format!("{}?{}", self.path, query)
    }

    /// Non-empty path segments.
    pub fn segments(&self) -> Vec<&str> {
        self.path.split('/').filter(|s| !s.is_empty()).collect()
    }

    pub fn json<T: DeserializeOwned>(&self) -> Result<T, serde_json::Error> {
        serde_json::from_slice(&self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub content_type: String,
    pub body: Vec<u8>,
}

impl Response {
    pub fn json<T: Serialize + ?Sized>(status: u16, body: &T) -> Response {
        match serde_json::to_vec(body) {
            Ok(body) => Response { status, content_type: "application/json".into(), body },
            Err(e) => Response::error(500, "Internal", &e.to_string()),
        }
    }

    pub fn ok<T: Serialize + ?Sized>(body: &T) -> Response {
        Response::json(200, body)
    }

    pub fn bytes(status: u16, content_type: &str, body: Vec<u8>) -> Response {
        Response { status, content_type: content_type.into(), body }
    }

    pub fn error(status: u16, code: &str, message: &str) -> Response {
        Response::json(status, &ErrorBody { error: code.into(), message: message.into() })
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn parse<T: DeserializeOwned>(&self) -> Result<T, TransportError> {
        serde_json::from_slice(&self.body).map_err(|e| TransportError::Decode(e.to_string()))
    }

    /// The error body, if this is a well-formed failure response.
    pub fn error_body(&self) -> Option<ErrorBody> {
        if self.is_success() {
            return None;
        }
        serde_json::from_slice(&self.body).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("cannot reach {0}")]
    Unreachable(String),
    #[error("request encoding failed: {0}")]
    Encode(String),
    #[error("response decoding failed: {0}")]
    Decode(String),
}

/// Something that can answer requests addressed to one party.
pub trait Handler: Send + Sync {
    fn handle(&self, request: &Request) -> Response;
}

/// Outbound channel of one party.
pub trait Transport: Send + Sync {
    fn send(&self, base_url: &str, request: &Request) -> Result<Response, TransportError>;
}

/// Blocking HTTP client. Must not be called from inside an async runtime.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpTransport { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        HttpTransport::new(Duration::from_secs(60))
    }
}

/// Delivers requests straight to registered handlers, keyed by base URL.
#[derive(Default)]
pub struct LocalNetwork {
    routes: std::sync::RwLock<std::collections::HashMap<String, std::sync::Arc<dyn Handler>>>,
}

impl LocalNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&self, base_url: &str, handler: std::sync::Arc<dyn Handler>) {
        self.routes
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(base_url.trim_end_matches('/').to_owned(), handler);
    }
}

impl Transport for LocalNetwork {
    fn send(&self, base_url: &str, request: &Request) -> Result<Response, TransportError> {
        let handler = self
            .routes
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(base_url.trim_end_matches('/'))
            .cloned()
            .ok_or_else(|| TransportError::Unreachable(base_url.to_owned()))?;
        Ok(handler.handle(request))
    }
}

const MAX_BODY: u64 = 256 * 1024 * 1024;

impl Transport for HttpTransport {
    fn send(&self, base_url: &str, request: &Request) -> Result<Response, TransportError> {
        let url = format!("{}{}", base_url.trim_end_matches('/'), request.target());
        let unreachable = |e: ureq::Error| TransportError::Unreachable(format!("{url}: {e}"));
        let mut response = match request.method {
            Method::Get => {
                let mut builder = self.agent.get(&url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.call().map_err(unreachable)?
            }
            Method::Post => {
                let mut builder = self.agent.post(&url);
                for (k, v) in &request.headers {
                    builder = builder.header(k, v);
                }
                builder.send(&request.body[..]).map_err(unreachable)?
            }
        };
        let status = response.status().as_u16();
        let content_type = response
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or("application/octet-stream")
            .to_owned();
        let body = response
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(|e| TransportError::Decode(e.to_string()))?;
        Ok(Response { status, content_type, body })
    }
}
