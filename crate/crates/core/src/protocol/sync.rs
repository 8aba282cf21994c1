use serde::{Deserialize, Serialize};

/// A named phase of a project. `Init` is always first, `Finished` is
/// terminal, and algorithms add their own steps in between.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProjectStep(String);

impl ProjectStep {
    pub const INIT: &'static str = "Init";
    pub const RESULT: &'static str = "Result";
    pub const FINISHED: &'static str = "Finished";

    pub fn new(name: impl Into<String>) -> Self {
        ProjectStep(name.into())
    }

    pub fn init() -> Self {
        Self::new(Self::INIT)
    }

    pub fn result() -> Self {
        Self::new(Self::RESULT)
    }

    pub fn finished() -> Self {
        Self::new(Self::FINISHED)
    }

    pub fn name(&self) -> &str {
        &self.0
    }

    pub fn is_reserved(&self) -> bool {
        matches!(self.0.as_str(), Self::INIT | Self::RESULT | Self::FINISHED)
    }

    pub fn is_init(&self) -> bool {
        self.0 == Self::INIT
    }

    pub fn is_result(&self) -> bool {
        self.0 == Self::RESULT
    }

    pub fn is_finished(&self) -> bool {
        self.0 == Self::FINISHED
    }
}

impl std::fmt::Display for ProjectStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl PartialEq<&str> for ProjectStep {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Step and communication round, echoed by every party on every message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SyncState {
    pub step: ProjectStep,
    pub round: u64,
}

impl SyncState {
    pub fn new(step: impl Into<String>, round: u64) -> Self {
        SyncState { step: ProjectStep::new(step), round }
    }

    /// `(Init, 0)`, where every project starts.
    pub fn initial() -> Self {
        SyncState { step: ProjectStep::init(), round: 0 }
    }
}

impl std::fmt::Display for SyncState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.step, self.round)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SyncCheck {
    Ok,
    /// Offending sources, sorted.
    Mismatch(Vec<String>),
}

impl SyncCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, SyncCheck::Ok)
    }
}

/// Compares every reported state against `expected`.
pub fn check_sync<S: AsRef<str>>(reports: &[(S, SyncState)], expected: &SyncState) -> SyncCheck {
    let mut offenders: Vec<String> = reports
        .iter()
        .filter(|(_, state)| state != expected)
        .map(|(source, _)| source.as_ref().to_owned())
        .collect();
    if offenders.is_empty() {
        return SyncCheck::Ok;
    }
    offenders.sort();
    offenders.dedup();
    SyncCheck::Mismatch(offenders)
}
