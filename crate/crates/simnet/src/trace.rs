//! Message trace: every request and response crossing the simulated
//! network, in the order the recorder saw them.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::{Arc, Mutex};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use maskfed_service::{Method, Request, Response, Transport, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Request,
    Response,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub source: String,
    pub destination: String,
    pub method: Method,
    /// Path and query of the request this event belongs to.
    pub endpoint: String,
    pub kind: EventKind,
    /// Response status; absent on requests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(with = "payload")]
    pub payload: Vec<u8>,
    /// Logical time: one tick per recorded event.
    pub timestamp: u64,
}

impl TraceEvent {
    pub fn is_request(&self) -> bool {
        self.kind == EventKind::Request
    }

    /// Path without query string.
    pub fn path(&self) -> &str {
        self.endpoint.split('?').next().unwrap_or_default()
    }

    pub fn text(&self) -> std::borrow::Cow<'_, str> {
        String::from_utf8_lossy(&self.payload)
    }

    pub fn json<T: serde::de::DeserializeOwned>(&self) -> Option<T> {
        serde_json::from_slice(&self.payload).ok()
    }
}

/// UTF-8 payloads are stored as text, anything else as base64.
mod payload {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(rename_all = "lowercase")]
    enum Stored {
        Text(String),
        Base64(String),
    }

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        match std::str::from_utf8(bytes) {
            Ok(text) => Stored::Text(text.to_owned()),
            Err(_) => Stored::Base64(STANDARD.encode(bytes)),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        match Stored::deserialize(d)? {
            Stored::Text(t) => Ok(t.into_bytes()),
            Stored::Base64(b) => STANDARD.decode(b).map_err(serde::de::Error::custom),
        }
    }
}

/// The single serialization point for events.
#[derive(Debug, Default)]
pub struct Recorder {
    events: Mutex<Vec<TraceEvent>>,
}

impl Recorder {
    pub fn new() -> Arc<Self> {
        Arc::new(Recorder::default())
    }

    fn push(&self, mut event: TraceEvent) {
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        event.seq = events.len() as u64;
        event.timestamp = event.seq;
        events.push(event);
    }

    pub fn snapshot(&self) -> Vec<TraceEvent> {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn len(&self) -> usize {
        self.events.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a party's outbound transport and records both directions.
pub struct TracedTransport {
    inner: Arc<dyn Transport>,
    source: String,
    recorder: Arc<Recorder>,
    /// Base URL to party name.
    names: Arc<BTreeMap<String, String>>,
}

impl TracedTransport {
    pub fn new(
        inner: Arc<dyn Transport>,
        source: impl Into<String>,
        recorder: Arc<Recorder>,
        names: Arc<BTreeMap<String, String>>,
    ) -> Self {
        TracedTransport { inner, source: source.into(), recorder, names }
    }
}

impl Transport for TracedTransport {
    fn send(&self, base_url: &str, request: &Request) -> Result<Response, TransportError> {
        let destination = self
            .names
            .get(base_url.trim_end_matches('/'))
            .cloned()
            .unwrap_or_else(|| base_url.to_owned());
        let endpoint = request.target();
        self.recorder.push(TraceEvent {
            seq: 0,
            source: self.source.clone(),
            destination: destination.clone(),
            method: request.method,
            endpoint: endpoint.clone(),
            kind: EventKind::Request,
            status: None,
            payload: request.body.clone(),
            timestamp: 0,
        });
        let response = self.inner.send(base_url, request)?;
        self.recorder.push(TraceEvent {
            seq: 0,
            source: destination,
            destination: self.source.clone(),
            method: request.method,
            endpoint,
            kind: EventKind::Response,
            status: Some(response.status),
            payload: response.body.clone(),
            timestamp: 0,
        });
        Ok(response)
    }
}

pub fn write_jsonl(events: &[TraceEvent], mut out: impl Write) -> std::io::Result<()> {
    for event in events {
        serde_json::to_writer(&mut out, event)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_jsonl(input: impl BufRead) -> std::io::Result<Vec<TraceEvent>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|line| serde_json::from_str(&line?).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e)))
        .collect()
}

/// Byte image of a trace as written to disk.
pub fn to_jsonl_bytes(events: &[TraceEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    write_jsonl(events, &mut out).expect("writing to a Vec cannot fail");
    out
}
