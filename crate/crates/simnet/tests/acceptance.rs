//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line, in order.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use maskfed_core::algorithms::variance::VarianceResult;
use maskfed_core::identity::{derive_compensator_identity, identity_from_roster, MemberHashes};
use maskfed_core::masking::{
    field_aggregate, field_share, field_unmask, mi_upper_bound, real_aggregate, real_share, real_unmask,
    validate_modulus, FieldVector, GaussianSpec, PrimeModulus, RealVector, RngHandle,
};
use maskfed_core::{ParameterMap, SyncState};
use maskfed_service::api::CompensationMessage;
use maskfed_service::server::ServerError;
use maskfed_simnet::oracle::{centralized_variance, check_aggregates, observed_rounds};
use maskfed_simnet::privacy::Clause;
use maskfed_simnet::scenario::{client_name, COMPENSATOR, SERVER};
use maskfed_simnet::{assert_privacy, run_batch, simulate, Faults, PrivacyContext, SimConfig, TransportMode};

use common::{random_partitions, small_partitions, ServerFixture};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

const P_LARGE: i64 = (1 << 54) - 33;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn field_masking_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let moduli = [17, 101, P_LARGE].map(|p| PrimeModulus::new(p).unwrap());
    let trials = 10_000;
    for trial in 0..trials {
        let p = moduli[trial % moduli.len()];
        let k = rng.random_range(3..=16);
        let len = rng.random_range(1..=8);
        let locals: Vec<FieldVector> =
            (0..k).map(|_| FieldVector::from_vec((0..len).map(|_| rng.random_range(0..p.value())).collect())).collect();
        let mut share_rng = RngHandle::deterministic(trial as u64);
        let (noise, masked): (Vec<_>, Vec<_>) =
            locals.iter().map(|v| field_share(v, p, &mut share_rng).unwrap()).unzip();
        let unmasked = field_unmask(&field_aggregate(&masked, p).unwrap(), &field_aggregate(&noise, p).unwrap(), p)
            .unwrap();
        let expected: Vec<i64> = (0..len)
            .map(|i| (locals.iter().map(|v| i128::from(v.values()[i])).sum::<i128>() % i128::from(p.value())) as i64)
            .collect();
        ensure(unmasked.values() == expected.as_slice(), || {
            format!("trial {trial}: K={k} p={} got {:?}, expected {expected:?}", p.value(), unmasked.values())
        })?;
    }
    Ok(format!("{trials} trials exact over K in 3..=16, p in {{17, 101, 2^54-33}}"))
}

fn modulus_bound() -> Outcome {
    let p = PrimeModulus::new(P_LARGE).map_err(|e| e.to_string())?;
    ensure(validate_modulus(p, 500).is_ok(), || "500 clients rejected".into())?;
    ensure(validate_modulus(p, 1024).is_err(), || "1024 clients accepted".into())?;
    let k = 512usize;
    let worst = FieldVector::from_vec(vec![P_LARGE - 1; 4]);
    let got = field_aggregate(&vec![worst; k], p).map_err(|e| e.to_string())?;
    let total = BigUint::from(k) * BigUint::from((P_LARGE - 1) as u64);
    ensure(total <= BigUint::from(i64::MAX as u64), || format!("{k} * (p - 1) = {total} exceeds i64"))?;
    let expected = total % BigUint::from(P_LARGE as u64);
    ensure(got.values().iter().all(|v| BigUint::from(*v as u64) == expected), || {
        format!("aggregate {:?} != {expected}", got.values())
    })?;
    Ok(format!("500 ok, 1024 rejected, K=512 worst case {expected} matches big-integer sum"))
}

fn real_masking_precision() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let gaussian = GaussianSpec::default();
    ensure(gaussian.variance() == 1e12, || format!("default variance is {}", gaussian.variance()))?;
    let mut worst: f64 = 0.0;
    let trials = 1_000;
    for trial in 0..trials {
        let k = rng.random_range(3..=16);
        let len = rng.random_range(1..=16);
        let locals: Vec<Vec<f64>> = (0..k).map(|_| (0..len).map(|_| rng.random_range(-1e6..=1e6)).collect()).collect();
        let mut share_rng = RngHandle::deterministic(trial);
        let (noise, masked): (Vec<_>, Vec<_>) = locals
            .iter()
            .map(|v| real_share(&RealVector::from_vec(v.clone()).unwrap(), gaussian, &mut share_rng).unwrap())
            .unzip();
        let unmasked =
            real_unmask(&real_aggregate(&masked).unwrap(), &real_aggregate(&noise).unwrap()).map_err(|e| e.to_string())?;
        for (i, got) in unmasked.values().iter().enumerate() {
            let expected: f64 = locals.iter().map(|v| v[i]).sum();
            worst = worst.max((got - expected).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("worst absolute error {worst:e}"))?;
    Ok(format!("{trials} trials, worst absolute error {worst:e}"))
}

fn federated_variance() -> Outcome {
    let parse = |masking: bool| -> Result<(VarianceResult, Vec<u8>), String> {
        let mut config = SimConfig::new("variance", small_partitions(), 4);
        config.masking = masking;
        let report = simulate(config).map_err(|e| e.to_string())?;
        check_aggregates(&report, 1e-6).map_err(|d| format!("{d:?}"))?;
        let text = String::from_utf8(report.result.clone()).map_err(|e| e.to_string())?;
        Ok((VarianceResult::from_csv(&text).ok_or("unparseable result")?, report.result))
    };
    let (masked, _) = parse(true)?;
    let (plain, _) = parse(false)?;
    let oracle = centralized_variance(&small_partitions());
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    ensure(oracle.count == 5 && oracle.mean == vec![3.0] && oracle.variance == vec![2.0], || {
        format!("oracle itself is off: {oracle:?}")
    })?;
    for (label, r) in [("masked", &masked), ("unmasked", &plain)] {
        ensure(r.count == 5, || format!("{label} count {}", r.count))?;
        ensure(rel(r.mean[0], 3.0) <= 1e-6, || format!("{label} mean {}", r.mean[0]))?;
        ensure(rel(r.variance[0], 2.0) <= 1e-6, || format!("{label} variance {}", r.variance[0]))?;
    }
    ensure(rel(masked.mean[0], plain.mean[0]) <= 1e-6 && rel(masked.variance[0], plain.variance[0]) <= 1e-6, || {
        format!("masked {masked:?} vs unmasked {plain:?}")
    })?;
    Ok(format!("count 5, mean {}, variance {} (masked), matches unmasked run", masked.mean[0], masked.variance[0]))
}

fn mutual_information_bound() -> Outcome {
    let s2 = 1e12;
    for (model, want) in [(s2, 0.5), (3.0 * s2, 1.0), (0.0, 0.0)] {
        let got = mi_upper_bound(model, s2).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, || format!("bound({model}, {s2}) = {got}, expected {want}"))?;
    }
    Ok("0.5, 1.0 and 0 bits".into())
}

/// Plain SHA-256 of the sorted, concatenated hex hashes.
fn oracle_digest(mut parts: Vec<String>) -> String {
    parts.sort();
    hex::encode(Sha256::digest(parts.concat().as_bytes()))
}

fn compensator_identity() -> Outcome {
    let fixture = ServerFixture::running(5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let project_hash = hex::encode(Sha256::digest(fixture.project_id.as_bytes()));
    let members: Vec<MemberHashes> = fixture.members.iter().map(|(u, t)| MemberHashes::of(u, t)).collect();
    let honest = derive_compensator_identity(&project_hash, &members).map_err(|e| e.to_string())?;
    let expected_tokens = oracle_digest(fixture.members.iter().map(|(_, t)| hex::encode(Sha256::digest(t))).collect());
    let expected_users = oracle_digest(fixture.members.iter().map(|(u, _)| hex::encode(Sha256::digest(u))).collect());
    ensure(honest.token_hash == expected_tokens && honest.username_hash == expected_users, || {
        "identity differs from the hash oracle".into()
    })?;
    for _ in 0..100 {
        let mut shuffled = members.clone();
        shuffled.shuffle(&mut rng);
        let again = derive_compensator_identity(&project_hash, &shuffled).map_err(|e| e.to_string())?;
        ensure(again == honest, || "identity depends on member order".into())?;
    }

    fixture.finish_init();
    let message = |identity| CompensationMessage { identity, sync: SyncState::new("Sum", 1), noise: ParameterMap::new() };
    for i in 0..fixture.members.len() {
        let tampered = ServerFixture::running(5);
        tampered.finish_init();
        let forged = format!("{}0", tampered.members[i].1);
        tampered.server.tamper_token(&tampered.project_id, i, &forged);
        let id = identity_from_roster(&tampered.project_id, tampered.members.iter().map(|(u, t)| (u.as_str(), t.as_str())))
            .map_err(|e| e.to_string())?;
        match tampered.compensate(message(id)) {
            Err(ServerError::IdentityMismatch) => {}
            other => return Err(format!("token {i} altered server-side: {other:?}")),
        }
    }
    fixture.compensate(message(honest)).map_err(|e| format!("honest identity rejected: {e}"))?;
    Ok("100 orderings agree with the hash oracle, 5/5 token mutations give IdentityMismatch".into())
}

fn synchronization() -> Outcome {
    let fixture = ServerFixture::running(3);
    fixture.finish_init();
    match fixture.submit(0, SyncState::initial()) {
        Err(ServerError::SyncMismatch { .. }) => {}
        other => return Err(format!("stale submission: {other:?}")),
    }
    let identity =
        identity_from_roster(&fixture.project_id, fixture.members.iter().map(|(u, t)| (u.as_str(), t.as_str())))
            .map_err(|e| e.to_string())?;
    let wrong_step = CompensationMessage { identity, sync: SyncState::new("Sum-square-error", 1), noise: ParameterMap::new() };
    match fixture.compensate(wrong_step) {
        Err(ServerError::SyncMismatch { .. }) => {}
        other => return Err(format!("wrong-step compensation: {other:?}")),
    }

    let report = simulate(SimConfig::new("variance", small_partitions(), 7)).map_err(|e| e.to_string())?;
    let rounds = observed_rounds(&report.trace);
    ensure(rounds.starts_with(&[0, 1, 2, 3]), || format!("rounds {rounds:?}"))?;
    ensure(rounds.iter().enumerate().all(|(i, r)| *r == i as u64), || format!("gap or repeat in {rounds:?}"))?;
    Ok(format!("stale and wrong-step rejected, honest run observed rounds {rounds:?}"))
}

fn privacy_data_flow() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let configs: Vec<SimConfig> = (0..100)
        .map(|i| {
            let k = rng.random_range(3..=6);
            let columns = rng.random_range(1..=3);
            SimConfig::new("variance", random_partitions(&mut rng, k, 12, columns), i)
        })
        .collect();
    for (i, outcome) in run_batch(configs).into_iter().enumerate() {
        let report = outcome.map_err(|e| format!("honest run {i}: {e}"))?;
        assert_privacy(&report.trace, &PrivacyContext::from_report(&report))
            .map_err(|v| format!("honest run {i}: {}", v[0]))?;
    }

    let mut noisy = SimConfig::new("variance", random_partitions(&mut rng, 4, 10, 2), 100);
    noisy.faults = Faults { noise_to_server: Some(2), ..Faults::default() };
    let report = simulate(noisy).map_err(|e| e.to_string())?;
    let violations = assert_privacy(&report.trace, &PrivacyContext::from_report(&report))
        .err()
        .ok_or("noise-to-server fault passed the privacy check")?;
    let hit = violations.iter().find(|v| v.clause == Clause::NoiseStaysOffServer).ok_or("no noise clause hit")?;
    let event = &report.trace[hit.seq.ok_or("violation not located")? as usize];
    ensure(event.source == client_name(2) && event.destination == SERVER, || format!("located at {event:?}"))?;
    let noise_located = format!("{hit}");

    let mut forwarding = SimConfig::new("variance", random_partitions(&mut rng, 4, 10, 2), 101);
    forwarding.faults = Faults { forward_individual_noise: true, ..Faults::default() };
    let report = simulate(forwarding).map_err(|e| e.to_string())?;
    let violations = assert_privacy(&report.trace, &PrivacyContext::from_report(&report))
        .err()
        .ok_or("individual-noise fault passed the privacy check")?;
    let hit = violations
        .iter()
        .find(|v| v.clause == Clause::NoiseStaysOffServer && v.detail.contains("individual noise forwarded"))
        .ok_or("forwarding not identified")?;
    let event = &report.trace[hit.seq.ok_or("violation not located")? as usize];
    ensure(event.source == COMPENSATOR && event.path().ends_with("/compensation"), || format!("located at {event:?}"))?;
    Ok(format!("100 honest runs clean; faults located: [{noise_located}] and [{hit}]"))
}

fn transport_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let partitions = random_partitions(&mut rng, 4, 20, 3);
    let memory = simulate(SimConfig::new("variance", partitions.clone(), 9)).map_err(|e| e.to_string())?;
    let mut over_http = SimConfig::new("variance", partitions, 9);
    over_http.transport = TransportMode::HttpLoopback;
    let http = simulate(over_http).map_err(|e| e.to_string())?;
    ensure(!memory.result.is_empty() && memory.result == http.result, || {
        format!("in-memory {:?} vs http {:?}", String::from_utf8_lossy(&memory.result), String::from_utf8_lossy(&http.result))
    })?;
    Ok(format!("{}-byte result identical over both transports", memory.result.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        (1, "field masking exactness", field_masking_exactness),
        (2, "modulus bound", modulus_bound),
        (3, "real masking precision", real_masking_precision),
        (4, "federated variance end to end", federated_variance),
        (5, "mutual information bound", mutual_information_bound),
        (6, "compensator identity", compensator_identity),
        (7, "synchronization", synchronization),
        (8, "privacy data flow", privacy_data_flow),
        (9, "transport equivalence", transport_equivalence),
    ];
    let mut failed = 0;
    for (n, name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n}: PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n}: FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
