//! The noise compensator: collects one noise share per client, sums them
//! once all `K` have arrived, forwards the sum to the server and forgets.
//!
//! Parameter names are opaque here. Nothing in this module knows which
//! algorithm produced them.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use maskfed_core::identity::{derive_compensator_identity, MemberHashes};
use maskfed_core::masking::{field_aggregate, real_aggregate, validate_modulus, FieldVector, PrimeModulus, RealVector};
use maskfed_core::protocol::MIN_PARTICIPANTS;
use maskfed_core::{CompensatorFlagMap, DataType, ParameterMap, ParameterValue, SyncState};

use crate::api::{CompensationMessage, ErrorBody, NoiseEnvelope};
use crate::clock::{Clock, SystemClock};
use crate::transport::{Handler, Method, Request, Response, Transport};

#[derive(Debug, Clone)]
pub struct CompensatorConfig {
    /// Extra delivery attempts after the first one fails.
    pub retry_budget: u32,
    pub retry_backoff: Duration,
    pub round_timeout_ms: u64,
}

impl Default for CompensatorConfig {
    fn default() -> Self {
        CompensatorConfig { retry_budget: 3, retry_backoff: Duration::from_secs(1), round_timeout_ms: 300_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompensatorError {
    #[error("noise from this client was already received for the round")]
    DuplicateNoise,
    #[error("envelope disagrees with the pending round: {0}")]
    InconsistentRound(String),
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("server rejected the compensation: {0}")]
    ServerRejected(String),
}

impl CompensatorError {
    pub fn code(&self) -> &'static str {
        match self {
            CompensatorError::DuplicateNoise => "DuplicateNoise",
            CompensatorError::InconsistentRound(_) => "InconsistentRound",
            CompensatorError::MalformedEnvelope(_) => "MalformedEnvelope",
            CompensatorError::ServerUnreachable(_) => "ServerUnreachable",
            CompensatorError::ServerRejected(_) => "ServerRejected",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            CompensatorError::MalformedEnvelope(_) => 400,
            CompensatorError::DuplicateNoise | CompensatorError::InconsistentRound(_) => 409,
            CompensatorError::ServerUnreachable(_) | CompensatorError::ServerRejected(_) => 502,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Member {
    token_hash: String,
    noise: ParameterMap,
}

/// Noise received so far for one project's current round.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingRound {
    pub project_hash: String,
    pub sync: SyncState,
    pub expected_count: u32,
    pub server_url: String,
    pub modulus: PrimeModulus,
    pub dtypes: CompensatorFlagMap,
    members: BTreeMap<String, Member>,
    created_ms: u64,
}

impl PendingRound {
    pub fn member_count(&self) -> usize {
        self.members.len()
    }

    fn disagreement(&self, env: &NoiseEnvelope) -> Option<&'static str> {
        if env.participant_count != self.expected_count {
            Some("participant count")
        } else if env.sync != self.sync {
            Some("sync state")
        } else if env.server_url != self.server_url {
            Some("server url")
        } else if env.modulus != self.modulus {
            Some("modulus")
        } else if env.dtypes != self.dtypes {
            Some("parameter types")
        } else {
            None
        }
    }
}

/// Acknowledgement returned to a client for its envelope.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseAck {
    pub received: u32,
    pub expected: u32,
    /// True when this envelope completed the round and triggered a flush.
    pub flushed: bool,
}

/// Misbehaviours the simulator switches on to prove its checks can fail.
#[cfg(feature = "sim-hooks")]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorFault {
    /// Forward the first member's own noise instead of the sum.
    ForwardIndividualNoise,
}

pub struct Compensator {
    config: CompensatorConfig,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    pending: Mutex<HashMap<String, PendingRound>>,
    #[cfg(feature = "sim-hooks")]
    fault: Mutex<Option<CompensatorFault>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn validate(env: &NoiseEnvelope) -> Result<(), CompensatorError> {
    let malformed = |m: &str| Err(CompensatorError::MalformedEnvelope(m.to_owned()));
    if ![&env.project_hash, &env.username_hash, &env.token_hash].iter().all(|h| is_hash(h)) {
        return malformed("hashes must be 64 lowercase hex characters");
    }
    if env.participant_count < MIN_PARTICIPANTS {
        return malformed("participant count below the minimum");
    }
    if validate_modulus(env.modulus, env.participant_count as u64).is_err() {
        return malformed("modulus too large for the participant count");
    }
    if env.server_url.is_empty() {
        return malformed("server url is empty");
    }
    if env.noise.is_empty() {
        return malformed("no noise values");
    }
    if env.noise.len() != env.dtypes.len() {
        return malformed("noise and type maps differ");
    }
    for (name, value) in &env.noise {
        if env.dtypes.get(name) != Some(&value.data_type()) {
            return malformed("noise value does not match its declared type");
        }
        if let ParameterValue::NonNegInt(v) = value {
            if *v < 0 || *v >= env.modulus.value() {
                return malformed("integer noise outside the field");
            }
        }
    }
    Ok(())
}

/// Sums each parameter across members, in username-hash order.
fn aggregate_noise(round: &PendingRound) -> Result<ParameterMap, CompensatorError> {
    let bad = |e: maskfed_core::MaskingError| CompensatorError::MalformedEnvelope(e.to_string());
    let mut out = ParameterMap::new();
    for (name, dtype) in &round.dtypes {
        let values = round.members.values().map(|m| &m.noise[name]);
        let sum = match dtype {
            DataType::NonNegativeInteger => {
                let vs: Vec<FieldVector> = values.map(|v| FieldVector::scalar(v.as_int().unwrap_or_default())).collect();
                ParameterValue::NonNegInt(field_aggregate(&vs, round.modulus).map_err(bad)?.values()[0])
            }
            DataType::FloatScalar => {
                let vs: Vec<RealVector> =
                    values.map(|v| RealVector::scalar(v.as_float().unwrap_or_default())).collect::<Result<_, _>>().map_err(bad)?;
                ParameterValue::Float(real_aggregate(&vs).map_err(bad)?.values()[0])
            }
            DataType::FloatArray => {
                let vs: Vec<RealVector> = values.filter_map(|v| v.as_array().cloned()).collect();
                ParameterValue::FloatArray(real_aggregate(&vs).map_err(bad)?)
            }
        };
        out.insert(name.clone(), sum);
    }
    Ok(out)
}

impl Compensator {
    pub fn new(config: CompensatorConfig, transport: Arc<dyn Transport>) -> Self {
        Self::with_clock(config, transport, Arc::new(SystemClock))
    }

    pub fn with_clock(config: CompensatorConfig, transport: Arc<dyn Transport>, clock: Arc<dyn Clock>) -> Self {
        Compensator {
            config,
            transport,
            clock,
            pending: Mutex::new(HashMap::new()),
            #[cfg(feature = "sim-hooks")]
            fault: Mutex::new(None),
        }
    }

    #[cfg(feature = "sim-hooks")]
    pub fn set_fault(&self, fault: Option<CompensatorFault>) {
        *lock(&self.fault) = fault;
    }

    /// Rounds currently holding noise.
    pub fn pending_rounds(&self) -> usize {
        lock(&self.pending).len()
    }

    /// Individual noise maps currently held, across all rounds.
    pub fn held_noise_maps(&self) -> usize {
        lock(&self.pending).values().map(PendingRound::member_count).sum()
    }

    /// Drops rounds older than the timeout, destroying their noise.
    pub fn sweep_timeouts(&self) -> usize {
        let now = self.clock.now_ms();
        let timeout = self.config.round_timeout_ms;
        let mut pending = lock(&self.pending);
        let before = pending.len();
        pending.retain(|hash, round| {
            let keep = now.saturating_sub(round.created_ms) <= timeout;
            if !keep {
                log::warn!("discarding incomplete round {} for project {hash}", round.sync);
            }
            keep
        });
        before - pending.len()
    }

    pub fn accept_noise(&self, env: NoiseEnvelope) -> Result<NoiseAck, CompensatorError> {
        validate(&env)?;
        self.sweep_timeouts();
        let complete = {
            let mut pending = lock(&self.pending);
            let round = pending.entry(env.project_hash.clone()).or_insert_with(|| PendingRound {
                project_hash: env.project_hash.clone(),
                sync: env.sync.clone(),
                expected_count: env.participant_count,
                server_url: env.server_url.clone(),
                modulus: env.modulus,
                dtypes: env.dtypes.clone(),
                members: BTreeMap::new(),
                created_ms: self.clock.now_ms(),
            });
            if let Some(field) = round.disagreement(&env) {
                return Err(CompensatorError::InconsistentRound(format!("{field} differs")));
            }
            if round.members.contains_key(&env.username_hash) {
                return Err(CompensatorError::DuplicateNoise);
            }
            round.members.insert(env.username_hash, Member { token_hash: env.token_hash, noise: env.noise });
            let received = round.members.len() as u32;
            if received < round.expected_count {
                return Ok(NoiseAck { received, expected: round.expected_count, flushed: false });
            }
            pending.remove(&env.project_hash).expect("round present")
        };
        let expected = complete.expected_count;
        if let Err(e) = self.flush_round(complete) {
            log::warn!("round for project {} dropped: {e}", env.project_hash);
        }
        Ok(NoiseAck { received: expected, expected, flushed: true })
    }

    /// Builds the compensation message for a complete round.
    pub fn compensation_for(&self, round: &PendingRound) -> Result<CompensationMessage, CompensatorError> {
        let members: Vec<MemberHashes> = round
            .members
            .iter()
            .map(|(u, m)| MemberHashes { username_hash: u.clone(), token_hash: m.token_hash.clone() })
            .collect();
        let identity = derive_compensator_identity(&round.project_hash, &members)
            .map_err(|e| CompensatorError::MalformedEnvelope(e.to_string()))?;
        #[allow(unused_mut)]
        let mut noise = aggregate_noise(round)?;
        #[cfg(feature = "sim-hooks")]
        if *lock(&self.fault) == Some(CompensatorFault::ForwardIndividualNoise) {
            if let Some(first) = round.members.values().next() {
                noise = first.noise.clone();
            }
        }
        Ok(CompensationMessage { identity, sync: round.sync.clone(), noise })
    }

    /// Sends the aggregate to the server. The round is consumed whatever
    /// the outcome, so no noise outlives this call.
    pub fn flush_round(&self, round: PendingRound) -> Result<(), CompensatorError> {
        let message = self.compensation_for(&round)?;
        let server_url = round.server_url.clone();
        let path = format!("/projects/{}/compensation", round.project_hash);
        drop(round);
        let request = Request::post_json(path, &message).map_err(|e| CompensatorError::MalformedEnvelope(e.to_string()))?;
        let mut last = String::new();
        for attempt in 0..=self.config.retry_budget {
            if attempt > 0 {
                std::thread::sleep(self.config.retry_backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.transport.send(&server_url, &request) {
                Ok(response) if response.is_success() => return Ok(()),
                Ok(response) if response.status < 500 => {
                    let body = response.error_body().unwrap_or(ErrorBody {
                        error: format!("HTTP {}", response.status),
                        message: String::new(),
                    });
                    return Err(CompensatorError::ServerRejected(body.error));
                }
                Ok(response) => last = format!("HTTP {}", response.status),
                Err(e) => last = e.to_string(),
            }
        }
        Err(CompensatorError::ServerUnreachable(last))
    }
}

#[derive(Clone)]
pub struct CompensatorHandler {
    compensator: Arc<Compensator>,
}

impl CompensatorHandler {
    pub fn new(compensator: Arc<Compensator>) -> Self {
        CompensatorHandler { compensator }
    }
}

impl Handler for CompensatorHandler {
    fn handle(&self, request: &Request) -> Response {
        match (request.method, request.segments().as_slice()) {
            (Method::Get, ["health"]) => Response::ok(&serde_json::json!({"ok": true})),
            (Method::Post, ["noise"]) => {
                let env: NoiseEnvelope = match request.json() {
                    Ok(env) => env,
                    Err(e) => return Response::error(400, "MalformedEnvelope", &e.to_string()),
                };
                match self.compensator.accept_noise(env) {
                    Ok(ack) => Response::ok(&ack),
                    Err(e) => Response::error(e.status(), e.code(), &e.to_string()),
                }
            }
            _ => Response::error(404, "NotFound", "not found"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::TransportError;
    use maskfed_core::identity::sha256_hex;

    /// Records what it is sent and answers with a fixed status.
    struct Recorder {
        status: u16,
        sent: Mutex<Vec<(String, Request)>>,
    }

    impl Recorder {
        fn new(status: u16) -> Arc<Self> {
            Arc::new(Recorder { status, sent: Mutex::new(Vec::new()) })
        }
    }

    impl Transport for Recorder {
        fn send(&self, base_url: &str, request: &Request) -> Result<Response, TransportError> {
            lock(&self.sent).push((base_url.to_owned(), request.clone()));
            if self.status == 0 {
                return Err(TransportError::Unreachable(base_url.into()));
            }
            Ok(Response::error(self.status, "X", ""))
        }
    }

    fn envelope(user: &str, noise: ParameterValue, k: u32, p: i64) -> NoiseEnvelope {
        let mut noise_map = ParameterMap::new();
        let mut dtypes = CompensatorFlagMap::new();
        dtypes.insert("v".into(), noise.data_type());
        noise_map.insert("v".into(), noise);
        NoiseEnvelope {
            project_hash: sha256_hex("project"),
            username_hash: sha256_hex(user),
            token_hash: sha256_hex(format!("token-{user}")),
            participant_count: k,
            server_url: "http://server".into(),
            modulus: PrimeModulus::new(p).unwrap(),
            sync: SyncState::new("Sum", 1),
            noise: noise_map,
            dtypes,
        }
    }

    fn quick() -> CompensatorConfig {
        CompensatorConfig { retry_budget: 2, retry_backoff: Duration::ZERO, round_timeout_ms: 1000 }
    }

    fn sent_message(recorder: &Recorder) -> CompensationMessage {
        let sent = lock(&recorder.sent);
        sent.last().unwrap().1.json().unwrap()
    }

    #[test]
    fn third_envelope_flushes_modular_sum() {
        let server = Recorder::new(200);
        let comp = Compensator::new(quick(), server.clone());
        for (user, n) in [("a", 13), ("b", 2)] {
            let ack = comp.accept_noise(envelope(user, ParameterValue::NonNegInt(n), 3, 17)).unwrap();
            assert!(!ack.flushed);
        }
        assert!(lock(&server.sent).is_empty());
        let ack = comp.accept_noise(envelope("c", ParameterValue::NonNegInt(5), 3, 17)).unwrap();
        assert_eq!(ack, NoiseAck { received: 3, expected: 3, flushed: true });
        let message = sent_message(&server);
        assert_eq!(message.noise["v"], ParameterValue::NonNegInt(3));
        let (url, request) = lock(&server.sent)[0].clone();
        assert_eq!(url, "http://server");
        assert_eq!(request.path, format!("/projects/{}/compensation", sha256_hex("project")));
        assert_eq!(comp.pending_rounds(), 0);
        assert_eq!(comp.held_noise_maps(), 0);
    }

    #[test]
    fn forwarded_identity_matches_member_hashes() {
        let server = Recorder::new(200);
        let comp = Compensator::new(quick(), server.clone());
        for user in ["c", "a", "b"] {
            comp.accept_noise(envelope(user, ParameterValue::Float(0.5), 3, 17)).unwrap();
        }
        let members: Vec<MemberHashes> = ["a", "b", "c"].iter().map(|u| MemberHashes::of(u, &format!("token-{u}"))).collect();
        let expected = derive_compensator_identity(&sha256_hex("project"), &members).unwrap();
        let message = sent_message(&server);
        assert_eq!(message.identity, expected);
        assert_eq!(message.sync, SyncState::new("Sum", 1));
        assert_eq!(message.noise["v"], ParameterValue::Float(1.5));
    }

    #[test]
    fn opposite_float_noise_cancels() {
        let server = Recorder::new(200);
        let comp = Compensator::new(quick(), server.clone());
        let arr = |v: Vec<f64>| ParameterValue::FloatArray(RealVector::from_vec(v).unwrap());
        comp.accept_noise(envelope("a", arr(vec![1e6, -2.5]), 3, 17)).unwrap();
        comp.accept_noise(envelope("b", arr(vec![-1e6, 2.5]), 3, 17)).unwrap();
        comp.accept_noise(envelope("c", arr(vec![0.0, 0.0]), 3, 17)).unwrap();
        assert_eq!(sent_message(&server).noise["v"], arr(vec![0.0, 0.0]));
    }

    #[test]
    fn duplicate_and_inconsistent_envelopes_are_rejected() {
        let comp = Compensator::new(quick(), Recorder::new(200));
        comp.accept_noise(envelope("a", ParameterValue::NonNegInt(1), 3, 17)).unwrap();
        assert_eq!(
            comp.accept_noise(envelope("a", ParameterValue::NonNegInt(2), 3, 17)),
            Err(CompensatorError::DuplicateNoise)
        );
        assert!(matches!(
            comp.accept_noise(envelope("b", ParameterValue::NonNegInt(2), 4, 17)),
            Err(CompensatorError::InconsistentRound(_))
        ));
        let mut stale = envelope("b", ParameterValue::NonNegInt(2), 3, 17);
        stale.sync = SyncState::new("Sum", 2);
        assert!(matches!(comp.accept_noise(stale), Err(CompensatorError::InconsistentRound(_))));
        assert_eq!(comp.held_noise_maps(), 1);
    }

    #[test]
    fn malformed_envelopes_are_rejected() {
        let comp = Compensator::new(quick(), Recorder::new(200));
        let mut e = envelope("a", ParameterValue::NonNegInt(1), 3, 17);
        e.username_hash = "ABC".into();
        assert!(matches!(comp.accept_noise(e), Err(CompensatorError::MalformedEnvelope(_))));
        assert!(matches!(
            comp.accept_noise(envelope("a", ParameterValue::NonNegInt(1), 2, 17)),
            Err(CompensatorError::MalformedEnvelope(_))
        ));
        assert!(matches!(
            comp.accept_noise(envelope("a", ParameterValue::NonNegInt(17), 3, 17)),
            Err(CompensatorError::MalformedEnvelope(_))
        ));
        let mut e = envelope("a", ParameterValue::NonNegInt(1), 3, 17);
        e.dtypes.insert("v".into(), DataType::FloatScalar);
        assert!(matches!(comp.accept_noise(e), Err(CompensatorError::MalformedEnvelope(_))));
        assert_eq!(comp.pending_rounds(), 0);
    }

    #[test]
    fn unreachable_server_drops_round_after_retries() {
        let server = Recorder::new(0);
        let comp = Compensator::new(quick(), server.clone());
        for user in ["a", "b", "c"] {
            comp.accept_noise(envelope(user, ParameterValue::NonNegInt(1), 3, 17)).unwrap();
        }
        assert_eq!(lock(&server.sent).len(), 3);
        assert_eq!(comp.held_noise_maps(), 0);
    }

    #[test]
    fn rejection_is_not_retried() {
        let server = Recorder::new(409);
        let comp = Compensator::new(quick(), server.clone());
        for user in ["a", "b", "c"] {
            comp.accept_noise(envelope(user, ParameterValue::NonNegInt(1), 3, 17)).unwrap();
        }
        assert_eq!(lock(&server.sent).len(), 1);
    }

    #[test]
    fn incomplete_rounds_expire() {
        let clock = Arc::new(crate::clock::ManualClock::new(0));
        let comp = Compensator::with_clock(quick(), Recorder::new(200), clock.clone());
        comp.accept_noise(envelope("a", ParameterValue::NonNegInt(1), 3, 17)).unwrap();
        clock.advance(1000);
        assert_eq!(comp.sweep_timeouts(), 0);
        clock.advance(1);
        assert_eq!(comp.sweep_timeouts(), 1);
        assert_eq!(comp.held_noise_maps(), 0);
    }

    #[test]
    fn handler_maps_errors_to_codes() {
        let handler = CompensatorHandler::new(Arc::new(Compensator::new(quick(), Recorder::new(200))));
        let env = envelope("a", ParameterValue::NonNegInt(1), 3, 17);
        let ok = handler.handle(&Request::post_json("/noise", &env).unwrap());
        assert_eq!(ok.status, 200);
        let dup = handler.handle(&Request::post_json("/noise", &env).unwrap());
        assert_eq!(dup.status, 409);
        assert_eq!(dup.error_body().unwrap().error, "DuplicateNoise");
        let bad = handler.handle(&Request::post("/noise"));
        assert_eq!(bad.error_body().unwrap().error, "MalformedEnvelope");
    }
}
