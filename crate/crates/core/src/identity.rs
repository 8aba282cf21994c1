//! Accounts, participant tokens and the hashed compensator identity.
//!
//! The compensator never learns usernames, tokens or the project id in the
//! clear. Each client sends it `sha256_hex` of the three; the compensator
//! sorts the per-client username hashes, concatenates and hashes them (and
//! likewise for token hashes), and presents the result to the server, which
//! recomputes it from its own roster.

use std::collections::BTreeMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IdentityError {
    #[error("malformed hash")]
    MalformedHash,
    #[error("roster is full")]
    RosterFull,
    #[error("bad credentials")]
    BadCredentials,
    #[error("token already bound")]
    TokenAlreadyBound,
    #[error("unknown project")]
    UnknownProject,
    #[error("username already taken")]
    UsernameTaken,
    #[error("username must not be empty")]
    EmptyUsername,
}

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(data.as_ref()))
}

fn is_hash(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

/// What the compensator presents to the server in place of a login.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CompensatorIdentity {
    pub project_hash: String,
    pub username_hash: String,
    pub token_hash: String,
}

/// A member's contribution to the identity: hashes of its username and token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemberHashes {
    pub username_hash: String,
    pub token_hash: String,
}

impl MemberHashes {
    pub fn of(username: &str, token: &str) -> Self {
        MemberHashes { username_hash: sha256_hex(username), token_hash: sha256_hex(token) }
    }
}

fn digest_sorted<'a>(hashes: impl Iterator<Item = &'a str>) -> String {
    let mut sorted: Vec<&str> = hashes.collect();
    sorted.sort_unstable();
    sha256_hex(sorted.concat())
}

/// Order of `members` does not matter; duplicates are kept.
pub fn derive_compensator_identity(
    project_hash: &str,
    members: &[MemberHashes],
) -> Result<CompensatorIdentity, IdentityError> {
    if members.is_empty() || !is_hash(project_hash) {
        return Err(IdentityError::MalformedHash);
    }
    if members.iter().any(|m| !is_hash(&m.username_hash) || !is_hash(&m.token_hash)) {
        return Err(IdentityError::MalformedHash);
    }
    Ok(CompensatorIdentity {
        project_hash: project_hash.to_owned(),
        username_hash: digest_sorted(members.iter().map(|m| m.username_hash.as_str())),
        token_hash: digest_sorted(members.iter().map(|m| m.token_hash.as_str())),
    })
}

/// Server-side recomputation from clear-text roster entries.
pub fn identity_from_roster<'a>(
    project_id: &str,
    roster: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<CompensatorIdentity, IdentityError> {
    let members: Vec<MemberHashes> = roster.into_iter().map(|(u, t)| MemberHashes::of(u, t)).collect();
    derive_compensator_identity(&sha256_hex(project_id), &members)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub password_digest: String,
    pub salt: String,
}

impl UserAccount {
    pub fn new<R: RngCore + ?Sized>(username: &str, password: &str, rng: &mut R) -> Result<Self, IdentityError> {
        if username.is_empty() {
            return Err(IdentityError::EmptyUsername);
        }
        let mut salt = [0u8; 16];
        rng.fill_bytes(&mut salt);
        let salt = hex::encode(salt);
        Ok(UserAccount {
            username: username.to_owned(),
            password_digest: password_digest(&salt, password),
            salt,
        })
    }

    pub fn verify(&self, password: &str) -> bool {
        constant_time_eq(
            self.password_digest.as_bytes(),
            password_digest(&self.salt, password).as_bytes(),
        )
    }
}

// Salted SHA-256. A deployment facing the internet should use a slow KDF.
fn password_digest(salt_hex: &str, password: &str) -> String {
    let mut h = Sha256::new();
    h.update(hex::decode(salt_hex).unwrap_or_default());
    h.update(password.as_bytes());
    hex::encode(h.finalize())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantToken {
    pub token: String,
    pub project_id: String,
    pub bound_username: Option<String>,
}

impl ParticipantToken {
    pub fn is_bound(&self) -> bool {
        self.bound_username.is_some()
    }
}

/// 128 random bits as 32 lowercase hex characters.
pub fn random_token<R: RngCore + ?Sized>(rng: &mut R) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Outcome of a successful [`IdentityStore::authenticate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grant {
    pub username: String,
    pub project_id: String,
    /// True when this call bound the token.
    pub newly_bound: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct ProjectTokens {
    capacity: u32,
    tokens: Vec<ParticipantToken>,
}

/// Accounts and per-project tokens. Callers serialize access per store, which
/// makes issue and bind atomic.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityStore {
    accounts: BTreeMap<String, UserAccount>,
    projects: BTreeMap<String, ProjectTokens>,
}

impl IdentityStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn signup<R: RngCore + ?Sized>(&mut self, username: &str, password: &str, rng: &mut R) -> Result<(), IdentityError> {
        if self.accounts.contains_key(username) {
            return Err(IdentityError::UsernameTaken);
        }
        let account = UserAccount::new(username, password, rng)?;
        self.accounts.insert(username.to_owned(), account);
        Ok(())
    }

    pub fn verify_password(&self, username: &str, password: &str) -> bool {
        self.accounts.get(username).is_some_and(|a| a.verify(password))
    }

    pub fn account(&self, username: &str) -> Option<&UserAccount> {
        self.accounts.get(username)
    }

    pub fn register_project(&mut self, project_id: &str, capacity: u32) {
        self.projects
            .entry(project_id.to_owned())
            .or_insert_with(|| ProjectTokens { capacity, tokens: Vec::new() });
    }

    pub fn issue_token<R: RngCore + ?Sized>(&mut self, project_id: &str, rng: &mut R) -> Result<ParticipantToken, IdentityError> {
        let project = self.projects.get_mut(project_id).ok_or(IdentityError::UnknownProject)?;
        if project.tokens.len() >= project.capacity as usize {
            return Err(IdentityError::RosterFull);
        }
        let token = loop {
            let candidate = random_token(rng);
            if project.tokens.iter().all(|t| t.token != candidate) {
                break candidate;
            }
        };
        let issued = ParticipantToken {
            token,
            project_id: project_id.to_owned(),
            bound_username: None,
        };
        project.tokens.push(issued.clone());
        Ok(issued)
    }

    pub fn tokens(&self, project_id: &str) -> &[ParticipantToken] {
        self.projects.get(project_id).map_or(&[], |p| p.tokens.as_slice())
    }

    /// With a password this is the join path and binds an unbound token.
    /// Without one it is the training path and requires an existing binding.
    pub fn authenticate(
        &mut self,
        username: &str,
        project_id: &str,
        token: &str,
        password: Option<&str>,
    ) -> Result<Grant, IdentityError> {
        let project = self.projects.get_mut(project_id).ok_or(IdentityError::UnknownProject)?;
        let Some(password) = password else {
            let bound = project
                .tokens
                .iter()
                .any(|t| t.token == token && t.bound_username.as_deref() == Some(username));
            return if bound {
                Ok(Grant { username: username.into(), project_id: project_id.into(), newly_bound: false })
            } else {
                Err(IdentityError::BadCredentials)
            };
        };
        if !self.accounts.get(username).is_some_and(|a| a.verify(password)) {
            return Err(IdentityError::BadCredentials);
        }
        let slot = project.tokens.iter().position(|t| t.token == token).ok_or(IdentityError::BadCredentials)?;
        match project.tokens[slot].bound_username.as_deref() {
            Some(owner) if owner == username => {
                Ok(Grant { username: username.into(), project_id: project_id.into(), newly_bound: false })
            }
            Some(_) => Err(IdentityError::TokenAlreadyBound),
            None => {
                // One participant, one token.
                if project.tokens.iter().any(|t| t.bound_username.as_deref() == Some(username)) {
                    return Err(IdentityError::TokenAlreadyBound);
                }
                project.tokens[slot].bound_username = Some(username.to_owned());
                Ok(Grant { username: username.into(), project_id: project_id.into(), newly_bound: true })
            }
        }
    }

    /// `(username, token)` for every bound token, in issue order.
    pub fn roster(&self, project_id: &str) -> Vec<(&str, &str)> {
        self.tokens(project_id)
            .iter()
            .filter_map(|t| t.bound_username.as_deref().map(|u| (u, t.token.as_str())))
            .collect()
    }

    pub fn capacity(&self, project_id: &str) -> Option<u32> {
        self.projects.get(project_id).map(|p| p.capacity)
    }

    /// Test and fault-injection hook: overwrite one stored token.
    #[doc(hidden)]
    pub fn tamper_token(&mut self, project_id: &str, index: usize, token: &str) {
        if let Some(t) = self.projects.get_mut(project_id).and_then(|p| p.tokens.get_mut(index)) {
            t.token = token.to_owned();
        }
    }
}
