//! Who saw what: trace-level checks of the protocol's privacy guarantees.
//!
//! Parameter values are compared by their canonical wire encoding, so a
//! check only means something when values come from a large domain (the
//! default modulus and noise variance). With a tiny modulus, unrelated
//! field elements collide.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use maskfed_core::{ParameterMap, ParameterValue, Table};
use maskfed_service::api::{LocalSubmission, NoiseEnvelope};
use maskfed_service::Method;

use crate::oracle::pair_responses;
use crate::scenario::{client_name, RawLocal, SimulationReport, COMPENSATOR, SERVER};
use crate::trace::TraceEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Clause {
    /// No client's individual noise reaches the server.
    NoiseStaysOffServer,
    /// The compensator receives only noise envelopes.
    CompensatorSeesOnlyNoise,
    /// Messages flow only client to server, client to compensator and
    /// compensator to server.
    Topology,
    /// Exactly one compensation per round that used masking.
    OneCompensationPerMaskedRound,
    /// No dataset rows or columns on the wire.
    NoRawData,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub clause: Clause,
    /// The offending event, when there is one.
    pub seq: Option<u64>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.seq {
            Some(seq) => write!(f, "{:?} at event {seq}: {}", self.clause, self.detail),
            None => write!(f, "{:?}: {}", self.clause, self.detail),
        }
    }
}

/// What the harness knows beyond the trace.
#[derive(Debug, Clone, Default)]
pub struct PrivacyContext {
    pub raw_locals: Vec<RawLocal>,
    /// Each client's dataset, by party name.
    pub datasets: Vec<(String, Table)>,
    /// Passwords, join tokens, sessions and project ids.
    pub secrets: Vec<String>,
}

impl PrivacyContext {
    pub fn from_report(report: &SimulationReport) -> Self {
        PrivacyContext {
            raw_locals: report.raw_locals.clone(),
            datasets: report.config.partitions.iter().enumerate().map(|(i, t)| (client_name(i), t.clone())).collect(),
            secrets: report.secrets.clone(),
        }
    }
}

/// A parameter value as it would appear on the wire.
#[derive(Debug, Clone)]
struct Token {
    owner: String,
    round: u64,
    parameter: String,
    text: String,
}

fn token_text(value: &ParameterValue) -> Option<String> {
    let wire = serde_json::to_value(value).ok()?;
    let text = match wire.get("data") {
        Some(data) => data.as_str()?.to_owned(),
        None => wire.to_string(),
    };
    (text.len() >= 4).then_some(text)
}

fn tokens<'a>(owner: &'a str, round: u64, params: &'a ParameterMap) -> impl Iterator<Item = Token> + 'a {
    params.iter().filter_map(move |(name, value)| {
        Some(Token { owner: owner.to_owned(), round, parameter: name.clone(), text: token_text(value)? })
    })
}

fn is_client(name: &str) -> bool {
    name != SERVER && name != COMPENSATOR
}

fn allowed_on_server(source: &str, method: Method, path: &str) -> bool {
    let segments: Vec<&str> = path.trim_matches('/').split('/').collect();
    if source == COMPENSATOR {
        return method == Method::Post && matches!(segments.as_slice(), ["projects", _, "compensation"]);
    }
    matches!(
        segments.as_slice(),
        ["health"]
            | ["auth", "signup" | "login"]
            | ["projects"]
            | ["projects", _, "tokens" | "join" | "info" | "global" | "local" | "result" | "status" | "abort"]
    )
}

/// The sender's own legitimate value for this parameter in this message.
fn own_value(event: &TraceEvent, token: &Token) -> bool {
    let own = if event.path().ends_with("/local") {
        event.json::<LocalSubmission>().filter(|l| l.sync.round == token.round).and_then(|l| {
            l.masked.get(&token.parameter).and_then(token_text)
        })
    } else if event.path() == "/noise" {
        event.json::<NoiseEnvelope>().filter(|e| e.sync.round == token.round).and_then(|e| {
            e.noise.get(&token.parameter).and_then(token_text)
        })
    } else {
        None
    };
    event.source == token.owner && own.as_deref() == Some(token.text.as_str())
}

/// Checks every clause over `trace`. All violations are reported.
pub fn assert_privacy(trace: &[TraceEvent], ctx: &PrivacyContext) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let mut flag = |clause, seq: Option<u64>, detail: String| violations.push(Violation { clause, seq, detail });

    let requests: Vec<&TraceEvent> = trace.iter().filter(|e| e.is_request()).collect();
    let mut noise = Vec::new();
    let mut masked = Vec::new();
    for event in requests.iter().filter(|e| is_client(&e.source)) {
        if event.path() == "/noise" {
            if let Some(env) = event.json::<NoiseEnvelope>() {
                noise.extend(tokens(&event.source, env.sync.round, &env.noise));
            }
        } else if event.path().ends_with("/local") {
            if let Some(local) = event.json::<LocalSubmission>() {
                masked.extend(tokens(&event.source, local.sync.round, &local.masked));
            }
        }
    }
    let raw: Vec<Token> =
        ctx.raw_locals.iter().flat_map(|r| tokens(&r.client, r.sync.round, &r.parameters).collect::<Vec<_>>()).collect();

    for event in &requests {
        let text = event.text();
        if event.destination == SERVER {
            if !allowed_on_server(&event.source, event.method, event.path()) {
                flag(Clause::NoiseStaysOffServer, Some(event.seq), format!("{} sent {} to the server", event.source, event.endpoint));
            }
            if event.json::<NoiseEnvelope>().is_some() {
                flag(Clause::NoiseStaysOffServer, Some(event.seq), format!("{} sent a noise envelope to the server", event.source));
            }
            for token in noise.iter().filter(|t| text.contains(&t.text) && !own_value(event, t)) {
                let what = if event.source == COMPENSATOR { "individual noise forwarded" } else { "noise leaked" };
                flag(
                    Clause::NoiseStaysOffServer,
                    Some(event.seq),
                    format!("{what}: {}'s {} for round {} sent by {}", token.owner, token.parameter, token.round, event.source),
                );
            }
        } else if event.destination == COMPENSATOR {
            if event.path() != "/noise" && event.path() != "/health" {
                flag(Clause::CompensatorSeesOnlyNoise, Some(event.seq), format!("{} sent {} to the compensator", event.source, event.endpoint));
            }
            for (kind, list) in [("masked", &masked), ("raw", &raw)] {
                for token in list.iter().filter(|t| text.contains(&t.text) && !own_value(event, t)) {
                    flag(
                        Clause::CompensatorSeesOnlyNoise,
                        Some(event.seq),
                        format!("{}'s {kind} {} for round {} reached the compensator", token.owner, token.parameter, token.round),
                    );
                }
            }
            for secret in ctx.secrets.iter().filter(|s| !s.is_empty() && text.contains(s.as_str())) {
                flag(Clause::CompensatorSeesOnlyNoise, Some(event.seq), format!("clear-text credential {secret:?} reached the compensator"));
            }
        }

        let legal = match (event.source.as_str(), event.destination.as_str()) {
            (SERVER, _) => false,
            (COMPENSATOR, dest) => dest == SERVER,
            (_, dest) => !is_client(dest),
        };
        if !legal {
            flag(Clause::Topology, Some(event.seq), format!("{} -> {}", event.source, event.destination));
        }
    }

    let pairs = pair_responses(trace);
    let mut masked_rounds = BTreeSet::new();
    let mut compensations: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for event in requests.iter().filter(|e| e.destination == SERVER) {
        if event.path().ends_with("/local") {
            let accepted = pairs.get(&event.seq).and_then(|r| r.status).is_some_and(|s| (200..300).contains(&s));
            if let Some(local) = event.json::<LocalSubmission>().filter(|l| accepted && !l.flags.is_empty()) {
                masked_rounds.insert(local.sync.round);
            }
        } else if event.path().ends_with("/compensation") {
            if let Some(round) = event.json::<serde_json::Value>().and_then(|v| v["sync"]["round"].as_u64()) {
                compensations.entry(round).or_default().push(event.seq);
            }
        }
    }
    for round in &masked_rounds {
        let count = compensations.get(round).map_or(0, Vec::len);
        if count != 1 {
            flag(Clause::OneCompensationPerMaskedRound, None, format!("round {round} used masking and got {count} compensations"));
        }
    }
    for (round, seqs) in compensations.iter().filter(|(r, _)| !masked_rounds.contains(r)) {
        flag(Clause::OneCompensationPerMaskedRound, seqs.first().copied(), format!("compensation for unmasked round {round}"));
    }

    let mut needles = Vec::new();
    for (owner, table) in &ctx.datasets {
        for line in table.to_csv().lines().filter(|l| l.len() >= 8) {
            needles.push((owner, format!("row {line:?}"), line.to_owned()));
        }
        if table.row_count() >= 2 {
            for (c, column) in table.columns().enumerate() {
                let bytes: Vec<u8> = column.iter().flat_map(|x| x.to_le_bytes()).collect();
                needles.push((owner, format!("column {c}"), STANDARD.encode(bytes)));
            }
        }
    }
    for event in trace {
        let text = event.text();
        for (owner, what, _) in needles.iter().filter(|(_, _, n)| text.contains(n.as_str())) {
            flag(Clause::NoRawData, Some(event.seq), format!("{owner}'s {what} sent by {}", event.source));
        }
    }

    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
