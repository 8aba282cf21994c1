//! One simulated project: a server, a compensator and `K` clients driven
//! round-robin on the calling thread, so the trace is a pure function of
//! the configuration.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use thiserror::Error;

use maskfed_core::masking::{GaussianSpec, PrimeModulus, RngHandle};
use maskfed_core::protocol::MIN_PARTICIPANTS;
use maskfed_core::{algorithms, ParameterMap, SyncState, Table};
use maskfed_service::api::{
    CreateProject, Credentials, Failure, JoinRequest, ProjectCreated, ProjectStatus, SessionToken, TokenList,
};
use maskfed_service::client::{join_flow, ClientError, ClientFault, ClientRuntime, Progress, RetryPolicy};
use maskfed_service::clock::ManualClock;
use maskfed_service::compensator::{Compensator, CompensatorConfig, CompensatorFault, CompensatorHandler};
use maskfed_service::http::HttpServer;
use maskfed_service::server::{CoordinationServer, MemoryStorage, ServerConfig, ServerHandler};
use maskfed_service::{HttpTransport, LocalNetwork, Request, Response, Transport};

use crate::trace::{Recorder, TraceEvent, TracedTransport};

pub const SERVER: &str = "server";
pub const COMPENSATOR: &str = "compensator";
pub const COORDINATOR: &str = "coordinator";

pub fn client_name(index: usize) -> String {
    format!("client-{index}")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TransportMode {
    #[default]
    InMemory,
    /// Real sockets on 127.0.0.1.
    HttpLoopback,
}

/// Deliberate protocol violations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// This client also posts its noise envelopes to the server.
    pub noise_to_server: Option<usize>,
    /// The compensator forwards one member's noise instead of the sum.
    pub forward_individual_noise: bool,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub algorithm: String,
    /// One dataset per client; `K` is its length.
    pub partitions: Vec<Table>,
    pub seed: u64,
    pub masking: bool,
    pub faults: Faults,
    pub transport: TransportMode,
    pub modulus: Option<PrimeModulus>,
    pub noise_variance: Option<GaussianSpec>,
}

impl SimConfig {
    pub fn new(algorithm: &str, partitions: Vec<Table>, seed: u64) -> Self {
        SimConfig {
            algorithm: algorithm.to_owned(),
            partitions,
            seed,
            masking: true,
            faults: Faults::default(),
            transport: TransportMode::InMemory,
            modulus: None,
            noise_variance: None,
        }
    }
}

/// A client's unmasked local parameters for one round, captured before
/// masking. Only the harness ever holds these for all clients at once.
#[derive(Debug, Clone, PartialEq)]
pub struct RawLocal {
    pub client: String,
    pub sync: SyncState,
    pub parameters: ParameterMap,
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub config: SimConfig,
    pub project_id: String,
    pub status: ProjectStatus,
    pub result: Vec<u8>,
    pub trace: Vec<TraceEvent>,
    pub raw_locals: Vec<RawLocal>,
    pub modulus: PrimeModulus,
    /// Clear-text credentials that must never reach the compensator.
    pub secrets: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("at least {MIN_PARTICIPANTS} clients are required, got {0}")]
    TooFewClients(usize),
    #[error("{clients} clients but {partitions} partitions")]
    PartitionMismatch { clients: usize, partitions: usize },
    #[error("algorithm {0:?} is not registered")]
    UnknownAlgorithm(String),
    #[error("setup request {endpoint} failed with {status}")]
    Setup { endpoint: String, status: u16 },
    #[error("{client}: {source}")]
    Client { client: String, source: ClientError },
    #[error("project ended as {status:?} ({failure:?})")]
    ProjectFailed { status: ProjectStatus, failure: Option<Failure>, trace_suffix: Vec<TraceEvent> },
    #[error("no party can make progress")]
    Stalled { trace_suffix: Vec<TraceEvent> },
    #[error("clients downloaded different result files")]
    DivergentResults,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `run_simulation` with an explicit client count.
pub fn run_simulation(k: usize, partitions: Vec<Table>, algorithm: &str, seed: u64) -> Result<SimulationReport, SimError> {
    if k != partitions.len() {
        return Err(SimError::PartitionMismatch { clients: k, partitions: partitions.len() });
    }
    simulate(SimConfig::new(algorithm, partitions, seed))
}

/// SplitMix64 step, used to give each party its own seed stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SUFFIX: usize = 24;

type NameMap = Arc<BTreeMap<String, String>>;
const SERVER_STREAM: u64 = u64::MAX;

struct Network {
    server_url: String,
    compensator_url: String,
    inner: Arc<dyn Transport>,
    names: NameMap,
    recorder: Arc<Recorder>,
    _listeners: Vec<HttpServer>,
}

impl Network {
    fn party(&self, name: &str) -> Arc<dyn Transport> {
        Arc::new(TracedTransport::new(self.inner.clone(), name, self.recorder.clone(), self.names.clone()))
    }

    fn suffix(&self) -> Vec<TraceEvent> {
        let trace = self.recorder.snapshot();
        trace[trace.len().saturating_sub(SUFFIX)..].to_vec()
    }
}

fn build_network(
    mode: TransportMode,
    server: Arc<CoordinationServer>,
    compensator_config: CompensatorConfig,
    clock: Arc<ManualClock>,
    fault: Option<CompensatorFault>,
) -> Result<Network, SimError> {
    let recorder = Recorder::new();
    let server_handler = Arc::new(ServerHandler::new(server));
    let names_for = |s: &str, c: &str| {
        Arc::new(BTreeMap::from([(s.to_owned(), SERVER.to_owned()), (c.to_owned(), COMPENSATOR.to_owned())]))
    };
    match mode {
        TransportMode::InMemory => {
            let (server_url, compensator_url) = ("http://server.sim".to_owned(), "http://compensator.sim".to_owned());
            let names = names_for(&server_url, &compensator_url);
            let net = Arc::new(LocalNetwork::new());
            let outbound = Arc::new(TracedTransport::new(net.clone(), COMPENSATOR, recorder.clone(), names.clone()));
            let compensator = Arc::new(Compensator::with_clock(compensator_config, outbound, clock));
            compensator.set_fault(fault);
            net.register(&server_url, server_handler);
            net.register(&compensator_url, Arc::new(CompensatorHandler::new(compensator)));
            Ok(Network { server_url, compensator_url, inner: net, names, recorder, _listeners: Vec::new() })
        }
        TransportMode::HttpLoopback => {
            let any = "127.0.0.1:0".parse().expect("literal address");
            let http: Arc<dyn Transport> = Arc::new(HttpTransport::default());
            let server_listener = maskfed_service::http::serve(server_handler, any)?;
            let server_url = server_listener.url();
            // The compensator's name map needs its own URL, which is only
            // known after binding, so bind first with a placeholder map.
            let names_cell: Arc<Mutex<Option<NameMap>>> = Arc::new(Mutex::new(None));
            let outbound = Arc::new(LateTraced { inner: http.clone(), recorder: recorder.clone(), names: names_cell.clone() });
            let compensator = Arc::new(Compensator::with_clock(compensator_config, outbound, clock));
            compensator.set_fault(fault);
            let compensator_listener = maskfed_service::http::serve(Arc::new(CompensatorHandler::new(compensator)), any)?;
            let compensator_url = compensator_listener.url();
            let names = names_for(&server_url, &compensator_url);
            *names_cell.lock().unwrap_or_else(|e| e.into_inner()) = Some(names.clone());
            Ok(Network {
                server_url,
                compensator_url,
                inner: http,
                names,
                recorder,
                _listeners: vec![server_listener, compensator_listener],
            })
        }
    }
}

/// Compensator-side tracing whose name map is filled in after binding.
struct LateTraced {
    inner: Arc<dyn Transport>,
    recorder: Arc<Recorder>,
    names: Arc<Mutex<Option<NameMap>>>,
}

impl Transport for LateTraced {
    fn send(&self, base_url: &str, request: &Request) -> Result<Response, maskfed_service::TransportError> {
        let names = self.names.lock().unwrap_or_else(|e| e.into_inner()).clone().unwrap_or_default();
        TracedTransport::new(self.inner.clone(), COMPENSATOR, self.recorder.clone(), names).send(base_url, request)
    }
}

fn expect(response: Response, endpoint: &str) -> Result<Response, SimError> {
    if response.is_success() {
        Ok(response)
    } else {
        Err(SimError::Setup { endpoint: endpoint.to_owned(), status: response.status })
    }
}

fn setup_call(t: &dyn Transport, url: &str, request: Request) -> Result<Response, SimError> {
    let endpoint = request.path.clone();
    let response = t
        .send(url, &request)
        .map_err(|e| SimError::Client { client: COORDINATOR.into(), source: e.into() })?;
    expect(response, &endpoint)
}

/// Runs one project from signup to `Finished`.
pub fn simulate(config: SimConfig) -> Result<SimulationReport, SimError> {
    let k = config.partitions.len();
    if k < MIN_PARTICIPANTS as usize {
        return Err(SimError::TooFewClients(k));
    }
    if !algorithms::is_registered(&config.algorithm) {
        return Err(SimError::UnknownAlgorithm(config.algorithm.clone()));
    }
    let clock = Arc::new(ManualClock::new(0));
    let server_config = ServerConfig { seed: Some(derive_seed(config.seed, SERVER_STREAM)), ..ServerConfig::default() };
    let server = Arc::new(
        CoordinationServer::with_parts(server_config, clock.clone(), Box::new(MemoryStorage::new()))
            .expect("memory storage loads"),
    );
    let compensator_config =
        CompensatorConfig { retry_budget: 0, retry_backoff: Duration::ZERO, ..CompensatorConfig::default() };
    let fault = config.faults.forward_individual_noise.then_some(CompensatorFault::ForwardIndividualNoise);
    let net = build_network(config.transport, server.clone(), compensator_config, clock, fault)?;

    let coordinator = net.party(COORDINATOR);
    let coord_creds = Credentials { username: COORDINATOR.into(), password: "pw-coordinator".into() };
    let mut secrets = vec![coord_creds.password.clone()];
    setup_call(&*coordinator, &net.server_url, Request::post_json("/auth/signup", &coord_creds).expect("encodes"))?;
    let session: SessionToken =
        setup_call(&*coordinator, &net.server_url, Request::post_json("/auth/login", &coord_creds).expect("encodes"))?
            .parse()
            .map_err(|e| SimError::Client { client: COORDINATOR.into(), source: e.into() })?;
    let bearer = format!("Bearer {}", session.session);
    let draft = CreateProject {
        name: "simulation".into(),
        description: String::new(),
        tool: "maskfed-simnet".into(),
        algorithm: config.algorithm.clone(),
        hyperparameters: ParameterMap::new(),
        participant_count: k as u32,
        modulus: config.modulus,
        noise_variance: config.noise_variance,
    };
    let created: ProjectCreated = setup_call(
        &*coordinator,
        &net.server_url,
        Request::post_json("/projects", &draft).expect("encodes").with_header("authorization", &bearer),
    )?
    .parse()
    .map_err(|e| SimError::Client { client: COORDINATOR.into(), source: e.into() })?;
    let project_id = created.project_id;
    let tokens: TokenList = setup_call(
        &*coordinator,
        &net.server_url,
        Request::post(format!("/projects/{project_id}/tokens"))
            .with_query("count", k.to_string())
            .with_header("authorization", &bearer),
    )?
    .parse()
    .map_err(|e| SimError::Client { client: COORDINATOR.into(), source: e.into() })?;
    secrets.push(session.session.clone());
    secrets.push(project_id.clone());

    let raw_locals: Arc<Mutex<Vec<RawLocal>>> = Arc::new(Mutex::new(Vec::new()));
    let mut clients = Vec::with_capacity(k);
    for (i, (token, data)) in tokens.tokens.iter().zip(&config.partitions).enumerate() {
        let name = client_name(i);
        let transport = net.party(&name);
        let creds = Credentials { username: name.clone(), password: format!("pw-{name}") };
        secrets.push(creds.password.clone());
        secrets.push(token.clone());
        setup_call(&*transport, &net.server_url, Request::post_json("/auth/signup", &creds).expect("encodes"))?;
        let join = JoinRequest { username: name.clone(), password: creds.password, token: token.clone() };
        let session = join_flow(
            &*transport,
            RetryPolicy::none(),
            &net.server_url,
            &net.compensator_url,
            &project_id,
            &join,
            &mut |_| true,
        )
        .map_err(|source| SimError::Client { client: name.clone(), source })?;
        let tap_sink = raw_locals.clone();
        let tap_name = name.clone();
        let fault = (config.faults.noise_to_server == Some(i)).then_some(ClientFault::NoiseToServer);
        let runtime = ClientRuntime::new(session, transport, data.clone(), RngHandle::deterministic(derive_seed(config.seed, i as u64)))
            .map_err(|source| SimError::Client { client: name.clone(), source })?
            .with_masking(config.masking)
            .with_retry(RetryPolicy::none())
            .with_fault(fault)
            .with_raw_tap(Box::new(move |sync, params| {
                tap_sink.lock().unwrap_or_else(|e| e.into_inner()).push(RawLocal {
                    client: tap_name.clone(),
                    sync: sync.clone(),
                    parameters: params.clone(),
                });
            }));
        clients.push((name, runtime));
    }

    drive(&mut clients, &net, &server, &project_id)?;

    let result = clients[0].1.result().unwrap_or_default().to_vec();
    if clients.iter().any(|(_, c)| c.result().unwrap_or_default() != result.as_slice()) {
        return Err(SimError::DivergentResults);
    }
    let record = server.record(&project_id).expect("project exists");
    let raw_locals = std::mem::take(&mut *raw_locals.lock().unwrap_or_else(|e| e.into_inner()));
    Ok(SimulationReport {
        project_id,
        status: record.status,
        result,
        trace: net.recorder.snapshot(),
        raw_locals,
        modulus: record.config.modulus,
        secrets,
        config,
    })
}

fn drive(
    clients: &mut [(String, ClientRuntime)],
    net: &Network,
    server: &CoordinationServer,
    project_id: &str,
) -> Result<(), SimError> {
    let mut finished = vec![false; clients.len()];
    loop {
        let mut progressed = false;
        for (i, (name, runtime)) in clients.iter_mut().enumerate() {
            if finished[i] {
                continue;
            }
            match runtime.poll().map_err(|source| SimError::Client { client: name.clone(), source })? {
                Progress::Submitted(_) => progressed = true,
                Progress::Finished => {
                    finished[i] = true;
                    progressed = true;
                }
                Progress::Waiting => {}
                Progress::Stopped(status) => {
                    let failure = server.record(project_id).and_then(|r| r.failure);
                    return Err(SimError::ProjectFailed { status, failure, trace_suffix: net.suffix() });
                }
            }
        }
        if finished.iter().all(|f| *f) {
            return Ok(());
        }
        if !progressed {
            return Err(SimError::Stalled { trace_suffix: net.suffix() });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_per_stream() {
        let seeds: std::collections::BTreeSet<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
        assert_ne!(derive_seed(7, 3), derive_seed(8, 3));
    }

    #[test]
    fn preconditions_are_checked() {
        let two = vec![Table::from_column(vec![1.0]), Table::from_column(vec![2.0])];
        assert!(matches!(run_simulation(2, two.clone(), "variance", 1), Err(SimError::TooFewClients(2))));
        assert!(matches!(run_simulation(3, two, "variance", 1), Err(SimError::PartitionMismatch { .. })));
        let three = vec![Table::from_column(vec![1.0]); 3];
        assert!(matches!(run_simulation(3, three, "nope", 1), Err(SimError::UnknownAlgorithm(_))));
    }
}
