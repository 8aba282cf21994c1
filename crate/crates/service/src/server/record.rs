//! The per-project state machine.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use maskfed_core::aggregation::{Compensation, Submission};
use maskfed_core::algorithms::{self, ServerContext};
use maskfed_core::{ParameterMap, ProjectConfig, ProjectStep, RoundBuffer, SyncState};

use crate::api::{Failure, ProjectStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub config: ProjectConfig,
    pub coordinator: String,
    pub status: ProjectStatus,
    pub sync: SyncState,
    pub global_parameters: ParameterMap,
    /// Private algorithm state carried between rounds.
    pub algorithm_state: ParameterMap,
    pub buffer: RoundBuffer,
    #[serde(with = "base64_opt")]
    pub result_payload: Option<Vec<u8>>,
    pub round_started_ms: Option<u64>,
    /// Sync rejections per source in the current round.
    pub sync_rejections: BTreeMap<String, u32>,
    pub failure: Option<Failure>,
}

/// Outcome of feeding something into a round.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundProgress {
    Pending,
    Advanced(SyncState),
    Failed(String),
}

fn transition_allowed(from: ProjectStatus, to: ProjectStatus) -> bool {
    use ProjectStatus::*;
    match (from, to) {
        (Created, Running) | (Running, Aggregating) | (Aggregating, Running) | (Aggregating, Done) => true,
        (f, Failed | Aborted) => !f.is_terminal(),
        _ => false,
    }
}

impl ProjectRecord {
    pub fn new(config: ProjectConfig, coordinator: String) -> Self {
        ProjectRecord {
            config,
            coordinator,
            status: ProjectStatus::Created,
            sync: SyncState::initial(),
            global_parameters: ParameterMap::new(),
            algorithm_state: ParameterMap::new(),
            buffer: RoundBuffer::new(0),
            result_payload: None,
            round_started_ms: None,
            sync_rejections: BTreeMap::new(),
            failure: None,
        }
    }

    pub fn id(&self) -> &str {
        &self.config.id
    }

    pub fn participants(&self) -> usize {
        self.config.participant_count as usize
    }

    /// Moves to `to` if the lifecycle allows it.
    pub fn transition(&mut self, to: ProjectStatus) -> bool {
        if !transition_allowed(self.status, to) {
            return false;
        }
        self.status = to;
        true
    }

    pub fn start(&mut self, now_ms: u64) -> bool {
        let started = self.transition(ProjectStatus::Running);
        if started {
            self.round_started_ms = Some(now_ms);
        }
        started
    }

    pub fn fail(&mut self, reason: impl Into<String>) {
        if self.transition(ProjectStatus::Failed) {
            self.failure = Some(Failure { round: self.sync.round, reason: reason.into() });
        }
    }

    /// Counts a sync rejection for `source`; true once the budget is spent.
    pub fn note_sync_rejection(&mut self, source: &str, budget: u32) -> bool {
        let count = self.sync_rejections.entry(source.to_owned()).or_default();
        *count += 1;
        *count > budget
    }

    pub fn timed_out(&self, now_ms: u64, timeout_ms: u64) -> bool {
        self.status == ProjectStatus::Running
            && self.round_started_ms.is_some_and(|t| now_ms.saturating_sub(t) > timeout_ms)
    }

    pub fn add_submission(&mut self, username: &str, submission: Submission, now_ms: u64) -> RoundProgress {
        self.buffer.submissions.insert(username.to_owned(), submission);
        self.try_aggregate(now_ms)
    }

    pub fn add_compensation(&mut self, compensation: Compensation, now_ms: u64) -> RoundProgress {
        self.buffer.compensation = Some(compensation);
        self.try_aggregate(now_ms)
    }

    /// Runs the server hook once the buffer is complete, then advances.
    pub fn try_aggregate(&mut self, now_ms: u64) -> RoundProgress {
        let k = self.participants();
        if self.buffer.submissions.len() == k && !self.buffer.expects_compensation() && self.buffer.compensation.is_some() {
            self.fail("compensation received for a round without compensator flags");
            return RoundProgress::Failed("unexpected compensation".into());
        }
        if !self.buffer.is_complete(k) {
            return RoundProgress::Pending;
        }
        if !self.transition(ProjectStatus::Aggregating) {
            return RoundProgress::Pending;
        }
        let Some(algorithm) = algorithms::server_algorithm(&self.config.algorithm) else {
            let reason = format!("algorithm {:?} is not available", self.config.algorithm);
            self.fail(reason.clone());
            return RoundProgress::Failed(reason);
        };
        let mut state = std::mem::take(&mut self.algorithm_state);
        let outcome = {
            let mut ctx = ServerContext::new(
                &self.sync.step,
                &self.buffer,
                self.config.modulus,
                &self.config.hyperparameters,
                &mut state,
            );
            algorithm.aggregate(&mut ctx).map(|()| ctx.finish())
        };
        self.algorithm_state = state;
        let (globals, next, result) = match outcome {
            Ok((globals, Some(next), result)) => (globals, next, result),
            Ok((_, None, _)) => {
                let reason = format!("step {} did not name a next step", self.sync.step);
                self.fail(reason.clone());
                return RoundProgress::Failed(reason);
            }
            Err(e) => {
                self.fail(e.to_string());
                return RoundProgress::Failed(e.to_string());
            }
        };
        self.global_parameters = globals;
        if result.is_some() {
            self.result_payload = result;
        }
        let round = self.sync.round + 1;
        let finished = next.is_finished();
        self.sync = SyncState { step: next, round };
        self.buffer = RoundBuffer::new(round);
        self.sync_rejections.clear();
        self.round_started_ms = Some(now_ms);
        self.transition(if finished { ProjectStatus::Done } else { ProjectStatus::Running });
        RoundProgress::Advanced(self.sync.clone())
    }

    pub fn step(&self) -> &ProjectStep {
        &self.sync.step
    }
}

mod base64_opt {
    use base64::engine::general_purpose::STANDARD;
    use base64::Engine;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(value: &Option<Vec<u8>>, s: S) -> Result<S::Ok, S::Error> {
        match value {
            Some(bytes) => s.serialize_some(&STANDARD.encode(bytes)),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Vec<u8>>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|text| STANDARD.decode(text).map_err(serde::de::Error::custom))
            .transpose()
    }
}
