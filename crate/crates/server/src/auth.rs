//! User accounts, password checks, login rate limiting and session tokens.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;

pub const USERS_FILE: &str = "users.json";
pub const MAX_FAILURES: usize = 5;
pub const FAILURE_WINDOW_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuthError {
    #[error("InvalidCredentials")]
    InvalidCredentials,
    #[error("RateLimited")]
    RateLimited,
    #[error("user {0} already exists")]
    DuplicateUser(String),
    #[error("cannot read or write the user file: {0}")]
    Storage(String),
}

impl AuthError {
    /// Name used on the wire.
    pub fn code(&self) -> &'static str {
        match self {
            AuthError::InvalidCredentials => "InvalidCredentials",
            AuthError::RateLimited => "RateLimited",
            AuthError::DuplicateUser(_) => "DuplicateUser",
            AuthError::Storage(_) => "Storage",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub username: String,
    pub salt: String,
    pub hash: String,
    pub created_at_ms: u64,
}

fn hash_password(salt: &[u8], password: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(salt);
    h.update(password.as_bytes());
    h.finalize().into()
}

impl UserAccount {
    pub fn new(username: &str, password: &str, created_at_ms: u64) -> Self {
        let mut salt = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut salt);
        Self {
            username: username.to_string(),
            salt: hex::encode(salt),
            hash: hex::encode(hash_password(&salt, password)),
            created_at_ms,
        }
    }

    pub fn verify(&self, password: &str) -> bool {
        let (Ok(salt), Ok(stored)) = (hex::decode(&self.salt), hex::decode(&self.hash)) else {
            return false;
        };
        hash_password(&salt, password).ct_eq(stored.as_slice()).into()
    }
}

#[derive(Debug, Default)]
pub struct Authenticator {
    users: BTreeMap<String, UserAccount>,
    failures: HashMap<String, VecDeque<u64>>,
    tokens: HashMap<String, String>,
}

impl Authenticator {
    pub fn load(dir: &Path) -> Result<Self, AuthError> {
        let path = dir.join(USERS_FILE);
        let users: Vec<UserAccount> = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| AuthError::Storage(e.to_string()))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(AuthError::Storage(e.to_string())),
        };
        Ok(Self { users: users.into_iter().map(|u| (u.username.clone(), u)).collect(), ..Self::default() })
    }

    pub fn save(&self, dir: &Path) -> Result<(), AuthError> {
        let users: Vec<&UserAccount> = self.users.values().collect();
        let body = serde_json::to_vec_pretty(&users).map_err(|e| AuthError::Storage(e.to_string()))?;
        let tmp = dir.join(format!("{USERS_FILE}.tmp"));
        fs::write(&tmp, body).and_then(|_| fs::rename(&tmp, dir.join(USERS_FILE))).map_err(|e| AuthError::Storage(e.to_string()))
    }

    pub fn add_user(&mut self, username: &str, password: &str, now_ms: u64) -> Result<(), AuthError> {
        if self.users.contains_key(username) {
            return Err(AuthError::DuplicateUser(username.to_string()));
        }
        self.users.insert(username.to_string(), UserAccount::new(username, password, now_ms));
        Ok(())
    }

    /// Adds or replaces the password of `username`.
    pub fn set_user(&mut self, username: &str, password: &str, now_ms: u64) {
        self.users.insert(username.to_string(), UserAccount::new(username, password, now_ms));
    }

    pub fn has_user(&self, username: &str) -> bool {
        self.users.contains_key(username)
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    /// Checks the password and issues a token. After [`MAX_FAILURES`] failures
    /// within [`FAILURE_WINDOW_MS`], further attempts are refused unchecked.
    pub fn authenticate(&mut self, username: &str, password: &str, now_ms: u64) -> Result<String, AuthError> {
        let window = self.failures.entry(username.to_string()).or_default();
        while window.front().is_some_and(|&t| now_ms.saturating_sub(t) >= FAILURE_WINDOW_MS) {
            window.pop_front();
        }
        if window.len() >= MAX_FAILURES {
            return Err(AuthError::RateLimited);
        }
        let ok = self.users.get(username).is_some_and(|u| u.verify(password));
        if !ok {
            window.push_back(now_ms);
            return Err(AuthError::InvalidCredentials);
        }
        window.clear();
        let mut raw = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        self.tokens.insert(token.clone(), username.to_string());
        Ok(token)
    }

    pub fn validate(&self, token: &str) -> Option<&str> {
        self.tokens.get(token).map(String::as_str)
    }

    pub fn revoke(&mut self, token: &str) {
        self.tokens.remove(token);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn auth() -> Authenticator {
        let mut a = Authenticator::default();
        a.add_user("grower", "tomato", 0).unwrap();
        a
    }

    #[test]
    fn correct_password_issues_token() {
        let mut a = auth();
        let token = a.authenticate("grower", "tomato", 0).unwrap();
        assert_eq!(a.validate(&token), Some("grower"));
    }

    #[test]
    fn wrong_password_is_rejected() {
        assert_eq!(auth().authenticate("grower", "potato", 0), Err(AuthError::InvalidCredentials));
        assert_eq!(auth().authenticate("nobody", "tomato", 0), Err(AuthError::InvalidCredentials));
    }

    #[test]
    fn sixth_failure_in_a_minute_is_rate_limited() {
        let mut a = auth();
        for i in 0..5 {
            assert_eq!(a.authenticate("grower", "x", i * 1000), Err(AuthError::InvalidCredentials));
        }
        assert_eq!(a.authenticate("grower", "tomato", 6000), Err(AuthError::RateLimited));
        // the first failure leaves the window at 60 s
        assert!(a.authenticate("grower", "tomato", 60_000).is_ok());
    }

    #[test]
    fn passwords_are_not_stored_in_clear() {
        let dir = tempfile::tempdir().unwrap();
        auth().save(dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(USERS_FILE)).unwrap();
        assert!(!text.contains("tomato"));
        let mut loaded = Authenticator::load(dir.path()).unwrap();
        assert!(loaded.authenticate("grower", "tomato", 0).is_ok());
    }

    #[test]
    fn duplicate_usernames_are_refused() {
        assert!(matches!(auth().add_user("grower", "y", 1), Err(AuthError::DuplicateUser(_))));
    }
}
