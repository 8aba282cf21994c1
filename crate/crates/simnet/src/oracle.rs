//! Independent reference computations for checking simulated runs.
//!
//! Nothing here calls the masking code: integer sums use `i128`
//! arithmetic and floats are summed in client order.

use std::collections::BTreeMap;

use maskfed_core::aggregation::Compensation;
use maskfed_core::masking::{PrimeModulus, RealVector};
use maskfed_core::{compute_aggregated_parameter, ParameterValue, RoundBuffer, Submission, Table};
use maskfed_service::api::{CompensationMessage, GlobalState, LocalSubmission};

use crate::scenario::{RawLocal, SimulationReport, COMPENSATOR, SERVER};
use crate::trace::TraceEvent;

/// Population statistics over the concatenation of all partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralStats {
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Two-pass mean and population variance, per column.
pub fn centralized_variance(partitions: &[Table]) -> CentralStats {
    let columns = partitions.first().map_or(0, Table::column_count);
    let count: usize = partitions.iter().map(Table::row_count).sum();
    let mut mean = vec![0.0; columns];
    let mut variance = vec![0.0; columns];
    if count == 0 {
        return CentralStats { count, mean, variance };
    }
    for (c, m) in mean.iter_mut().enumerate() {
        *m = partitions.iter().flat_map(|t| t.column(c)).sum::<f64>() / count as f64;
    }
    for (c, v) in variance.iter_mut().enumerate() {
        let m = mean[c];
        *v = partitions.iter().flat_map(|t| t.column(c)).map(|x| (x - m) * (x - m)).sum::<f64>() / count as f64;
    }
    CentralStats { count, mean, variance }
}

/// Plain sum of `values`: modular for integers, elementwise for arrays.
/// `None` when the values do not share one type and shape.
pub fn oracle_sum(values: &[&ParameterValue], p: PrimeModulus) -> Option<ParameterValue> {
    let first = values.first()?;
    match first {
        ParameterValue::NonNegInt(_) => {
            let mut acc: i128 = 0;
            for v in values {
                acc += i128::from(v.as_int()?);
            }
            Some(ParameterValue::NonNegInt((acc % i128::from(p.value())) as i64))
        }
        ParameterValue::Float(_) => {
            let mut acc = 0.0;
            for v in values {
                acc += v.as_float()?;
            }
            Some(ParameterValue::Float(acc))
        }
        ParameterValue::FloatArray(a) => {
            let mut acc = vec![0.0; a.len()];
            for v in values {
                let v = v.as_array().filter(|v| v.shape() == a.shape())?;
                for (s, x) in acc.iter_mut().zip(v.values()) {
                    *s += x;
                }
            }
            Some(ParameterValue::FloatArray(RealVector::new(acc, a.shape().to_vec()).ok()?))
        }
    }
}

/// Largest absolute difference, or `None` on a type or shape mismatch.
/// Integers must match exactly, reported as 0 or infinity.
pub fn distance(a: &ParameterValue, b: &ParameterValue) -> Option<f64> {
    match (a, b) {
        (ParameterValue::NonNegInt(x), ParameterValue::NonNegInt(y)) => Some(if x == y { 0.0 } else { f64::INFINITY }),
        (ParameterValue::Float(x), ParameterValue::Float(y)) => Some((x - y).abs()),
        (ParameterValue::FloatArray(x), ParameterValue::FloatArray(y)) if x.shape() == y.shape() => {
            Some(x.values().iter().zip(y.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        }
        _ => None,
    }
}

/// Index of the response answering each request, by `seq`. Calls on one
/// thread nest properly, so a stack pairs them.
pub fn pair_responses(trace: &[TraceEvent]) -> BTreeMap<u64, &TraceEvent> {
    let mut open: Vec<&TraceEvent> = Vec::new();
    let mut pairs = BTreeMap::new();
    for event in trace {
        if event.is_request() {
            open.push(event);
        } else if let Some(request) = open.pop() {
            pairs.insert(request.seq, event);
        }
    }
    pairs
}

fn accepted<'a>(trace: &'a [TraceEvent], pairs: &BTreeMap<u64, &TraceEvent>) -> impl Iterator<Item = &'a TraceEvent> {
    let ok: Vec<u64> =
        pairs.iter().filter(|(_, r)| r.status.is_some_and(|s| (200..300).contains(&s))).map(|(s, _)| *s).collect();
    trace.iter().filter(move |e| e.is_request() && ok.binary_search(&e.seq).is_ok())
}

/// Rebuilds each round's buffer from the accepted `/local` and
/// `/compensation` requests the server received.
pub fn replay_rounds(trace: &[TraceEvent]) -> BTreeMap<u64, RoundBuffer> {
    let pairs = pair_responses(trace);
    let mut rounds: BTreeMap<u64, RoundBuffer> = BTreeMap::new();
    for event in accepted(trace, &pairs).filter(|e| e.destination == SERVER) {
        if event.path().ends_with("/local") {
            if let Some(local) = event.json::<LocalSubmission>() {
                let buffer = rounds.entry(local.sync.round).or_insert_with(|| RoundBuffer::new(local.sync.round));
                buffer.submissions.insert(
                    event.source.clone(),
                    Submission { sync: local.sync, parameters: local.masked, flags: local.flags },
                );
            }
        } else if event.path().ends_with("/compensation") && event.source == COMPENSATOR {
            if let Some(msg) = event.json::<CompensationMessage>() {
                let buffer = rounds.entry(msg.sync.round).or_insert_with(|| RoundBuffer::new(msg.sync.round));
                buffer.compensation = Some(Compensation { identity: msg.identity, sync: msg.sync, noise: msg.noise });
            }
        }
    }
    rounds
}

/// Round numbers from successful `/global` responses, deduplicated in
/// order of first appearance.
pub fn observed_rounds(trace: &[TraceEvent]) -> Vec<u64> {
    let mut seen = Vec::new();
    for event in trace.iter().filter(|e| !e.is_request() && e.path().ends_with("/global") && e.status == Some(200)) {
        if let Some(state) = event.json::<GlobalState>() {
            if !seen.contains(&state.sync.round) {
                seen.push(state.sync.round);
            }
        }
    }
    seen
}

/// Per round number and parameter, the sum of every client's raw value.
pub fn raw_sums(raw: &[RawLocal], p: PrimeModulus) -> BTreeMap<u64, BTreeMap<String, ParameterValue>> {
    let mut grouped: BTreeMap<u64, BTreeMap<String, Vec<&ParameterValue>>> = BTreeMap::new();
    for local in raw {
        let round = grouped.entry(local.sync.round).or_default();
        for (name, value) in &local.parameters {
            round.entry(name.clone()).or_default().push(value);
        }
    }
    grouped
        .into_iter()
        .map(|(round, params)| {
            let sums = params.into_iter().filter_map(|(n, vs)| Some((n, oracle_sum(&vs, p)?))).collect();
            (round, sums)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discrepancy {
    pub round: u64,
    pub parameter: String,
    pub detail: String,
}

/// Checks that every aggregate the server could compute from what it
/// received equals the plain sum of raw locals. Returns how many
/// parameters were compared.
pub fn check_aggregates(report: &SimulationReport, tolerance: f64) -> Result<usize, Vec<Discrepancy>> {
    let expected = raw_sums(&report.raw_locals, report.modulus);
    let rounds = replay_rounds(&report.trace);
    let mut problems = Vec::new();
    let mut checked = 0;
    for (&round, sums) in &expected {
        let Some(buffer) = rounds.get(&round) else {
            problems.push(Discrepancy { round, parameter: String::new(), detail: "round never reached the server".into() });
            continue;
        };
        for (name, want) in sums {
            checked += 1;
            let got = compute_aggregated_parameter(name, want.data_type(), buffer, report.modulus);
            let detail = match got {
                Err(e) => Some(format!("aggregation failed: {e}")),
                Ok(got) => match distance(&got, want) {
                    Some(d) if d <= tolerance => None,
                    Some(d) => Some(format!("off by {d:e}: got {got:?}, expected {want:?}")),
                    None => Some(format!("shape differs: got {got:?}, expected {want:?}")),
                },
            };
            if let Some(detail) = detail {
                problems.push(Discrepancy { round, parameter: name.clone(), detail });
            }
        }
    }
    if problems.is_empty() {
        Ok(checked)
    } else {
        Err(problems)
    }
}
