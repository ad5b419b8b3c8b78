//! Transactional state store.
//!
//! All tables live in one [`State`] value. A write runs against a copy and
//! replaces the current state only when the closure succeeds (and, for a
//! file-backed store, only once the new snapshot is durably on disk), so
//! readers never observe a half-applied change.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::accounts::{AccountId, UserAccount};
use crate::bridge::PostRecord;
use crate::queue::TaskTable;
use crate::registry::{Article, ArticleEvent};
use crate::review::Review;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum StoreError {
    #[error("store unreachable at {location}: {reason}")]
    Unreachable { location: String, reason: String },
    #[error("store snapshot at {location} is corrupt: {reason}")]
    Corrupt { location: String, reason: String },
    #[error("failed to persist store: {0}")]
    Persist(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct State {
    pub articles: BTreeMap<String, Article>,
    pub article_events: Vec<ArticleEvent>,
    pub reviews: BTreeMap<String, Review>,
    pub accounts: BTreeMap<AccountId, UserAccount>,
    pub tasks: TaskTable,
    /// `<event id>/<account id>` pairs already handed to the mail sender.
    pub delivered_notifications: BTreeSet<String>,
    pub external_posts: BTreeMap<String, PostRecord>,
    pub next_event_seq: u64,
}

impl State {
    pub fn next_seq(&mut self) -> u64 {
        self.next_event_seq += 1;
        self.next_event_seq
    }
}

enum Backend {
    Memory,
    File(PathBuf),
}

pub struct Store {
    state: RwLock<State>,
    backend: Backend,
}

impl Default for Store {
    fn default() -> Self {
        Store::memory()
    }
}

impl Store {
    pub fn memory() -> Self {
        Store {
            state: RwLock::new(State::default()),
            backend: Backend::Memory,
        }
    }

    /// `memory` for a volatile store, `file:<path>` (or a bare path) for a
    /// JSON snapshot file. A missing file is created.
    pub fn open(location: &str) -> Result<Self, StoreError> {
        let location = location.trim();
        if location.is_empty() || location == "memory" || location.starts_with("memory:") {
            return Ok(Store::memory());
        }
        let path = PathBuf::from(location.strip_prefix("file:").unwrap_or(location));
        let state = if path.exists() {
            let raw = fs::read(&path).map_err(|e| StoreError::Unreachable {
                location: path.display().to_string(),
                reason: e.to_string(),
            })?;
            serde_json::from_slice(&raw).map_err(|e| StoreError::Corrupt {
                location: path.display().to_string(),
                reason: e.to_string(),
            })?
        } else {
            let state = State::default();
            persist(&path, &state).map_err(|e| StoreError::Unreachable {
                location: path.display().to_string(),
                reason: e.to_string(),
            })?;
            state
        };
        Ok(Store {
            state: RwLock::new(state),
            backend: Backend::File(path),
        })
    }

    pub fn read<R>(&self, f: impl FnOnce(&State) -> R) -> R {
        f(&self.state.read())
    }

    /// Clone of the whole state.
    pub fn snapshot(&self) -> State {
        self.state.read().clone()
    }

    /// Apply `f` atomically. Writers are serialized.
    pub fn write<R, E>(&self, f: impl FnOnce(&mut State) -> Result<R, E>) -> Result<R, E>
    where
        E: From<StoreError>,
    {
        let mut guard = self.state.write();
        let mut draft = guard.clone();
        let out = f(&mut draft)?;
        if let Backend::File(path) = &self.backend {
            persist(path, &draft).map_err(|e| StoreError::Persist(e.to_string()))?;
        }
        *guard = draft;
        Ok(out)
    }
}

fn persist(path: &Path, state: &State) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile_in(dir, path)?;
    let bytes = serde_json::to_vec(state).map_err(std::io::Error::other)?;
    tmp.1.write_all(&bytes)?;
    tmp.1.sync_all()?;
    fs::rename(&tmp.0, path)
}

fn tempfile_in(dir: &Path, target: &Path) -> std::io::Result<(PathBuf, fs::File)> {
    let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("store");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let file = fs::File::create(&tmp)?;
    Ok((tmp, file))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failed_write_leaves_state_untouched() {
        let store = Store::memory();
        let result: Result<(), StoreError> = store.write(|s| {
            s.next_event_seq = 7;
            Err(StoreError::Persist("boom".into()))
        });
        assert!(result.is_err());
        assert_eq!(store.read(|s| s.next_event_seq), 0);
    }

    #[test]
    fn file_store_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        let location = format!("file:{}", path.display());
        let store = Store::open(&location).unwrap();
        store
            .write(|s| {
                s.next_event_seq = 42;
                Ok::<_, StoreError>(())
            })
            .unwrap();
        drop(store);
        let reopened = Store::open(&location).unwrap();
        assert_eq!(reopened.read(|s| s.next_event_seq), 42);
    }

    #[test]
    fn missing_directory_is_unreachable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nope/also-nope/kb.json");
        let err = Store::open(&path.display().to_string()).err().unwrap();
        assert!(matches!(err, StoreError::Unreachable { .. }));
    }

    #[test]
    fn corrupt_snapshot_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.json");
        fs::write(&path, b"{not json").unwrap();
        let err = Store::open(&path.display().to_string()).err().unwrap();
        assert!(matches!(err, StoreError::Corrupt { .. }));
    }
}
