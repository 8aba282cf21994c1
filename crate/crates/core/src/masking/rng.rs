use rand::rngs::StdRng;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Which generator backs a [`RngHandle`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RngKind {
    /// Seeded ChaCha stream; reproducible, not meant for production secrecy.
    #[default]
    DeterministicPrng,
    /// Generator seeded from the operating system; the seed is ignored.
    OsSecure,
}

enum Inner {
    Deterministic(ChaCha20Rng),
    Secure(StdRng),
}

/// A noise stream owned by exactly one party.
///
/// Equal seeds with [`RngKind::DeterministicPrng`] yield identical streams.
pub struct RngHandle {
    seed: u64,
    kind: RngKind,
    inner: Inner,
}

impl RngHandle {
    pub fn new(seed: u64, kind: RngKind) -> Self {
        let inner = match kind {
            RngKind::DeterministicPrng => Inner::Deterministic(ChaCha20Rng::seed_from_u64(seed)),
            RngKind::OsSecure => Inner::Secure(StdRng::from_os_rng()),
        };
        RngHandle { seed, kind, inner }
    }

    pub fn deterministic(seed: u64) -> Self {
        Self::new(seed, RngKind::DeterministicPrng)
    }

    pub fn os_secure() -> Self {
        Self::new(0, RngKind::OsSecure)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn kind(&self) -> RngKind {
        self.kind
    }
}

impl std::fmt::Debug for RngHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RngHandle")
            .field("kind", &self.kind)
            .finish_non_exhaustive()
    }
}

impl RngCore for RngHandle {
    fn next_u32(&mut self) -> u32 {
        match &mut self.inner {
            Inner::Deterministic(r) => r.next_u32(),
            Inner::Secure(r) => r.next_u32(),
        }
    }

    fn next_u64(&mut self) -> u64 {
        match &mut self.inner {
            Inner::Deterministic(r) => r.next_u64(),
            Inner::Secure(r) => r.next_u64(),
        }
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        match &mut self.inner {
            Inner::Deterministic(r) => r.fill_bytes(dst),
            Inner::Secure(r) => r.fill_bytes(dst),
        }
    }
}
