//! Session and image persistence. Both stores keep everything in memory and,
//! when given a directory, mirror writes to disk so a restarted service picks
//! up where it left off.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use prefalign_core::pipeline::{content_digest, deserialize_session, serialize_session};
use prefalign_core::SessionState;

#[derive(Debug, PartialEq)]
pub enum PutOutcome {
    Stored,
    /// Someone else advanced the session first; carries the current revision.
    Conflict(u64),
    Missing,
}

pub struct SessionStore {
    dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, SessionState>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

impl SessionStore {
    pub fn in_memory() -> Self {
        Self { dir: None, sessions: RwLock::new(HashMap::new()) }
    }

    /// Opens `dir`, loading every session already saved there. Files that
    /// fail to deserialize are skipped with a warning.
    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            match deserialize_session(&fs::read(&path)?) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), s);
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        log::info!("loaded {} session(s) from {}", sessions.len(), dir.display());
        Ok(Self { dir: Some(dir), sessions: RwLock::new(sessions) })
    }

    pub fn get(&self, id: &str) -> Option<SessionState> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn persist(&self, state: &SessionState) -> io::Result<()> {
        if let Some(dir) = &self.dir {
            write_atomic(&dir.join(format!("{}.json", state.id)), &serialize_session(state))?;
        }
        Ok(())
    }

    /// Stores a new session; fails if the id is taken.
    pub fn insert(&self, state: SessionState) -> io::Result<bool> {
        let mut map = self.sessions.write().unwrap();
        if map.contains_key(&state.id) {
            return Ok(false);
        }
        self.persist(&state)?;
        map.insert(state.id.clone(), state);
        Ok(true)
    }

    /// Replaces the session only if its stored revision is still `expected`.
    pub fn compare_and_swap(&self, expected: u64, state: SessionState) -> io::Result<PutOutcome> {
        let mut map = self.sessions.write().unwrap();
        let Some(current) = map.get(&state.id) else { return Ok(PutOutcome::Missing) };
        if current.revision != expected {
            return Ok(PutOutcome::Conflict(current.revision));
        }
        self.persist(&state)?;
        map.insert(state.id.clone(), state);
        Ok(PutOutcome::Stored)
    }
}

/// PNGs keyed by the hex SHA-256 of their bytes.
pub struct ImageStore {
    dir: Option<PathBuf>,
    images: RwLock<HashMap<String, Vec<u8>>>,
}

pub fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl ImageStore {
    pub fn in_memory() -> Self {
        Self { dir: None, images: RwLock::new(HashMap::new()) }
    }

    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir), images: RwLock::new(HashMap::new()) })
    }

    pub fn put(&self, png: Vec<u8>) -> io::Result<String> {
        let digest = content_digest(&png);
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{digest}.png"));
            if !path.exists() {
                write_atomic(&path, &png)?;
            }
        }
        self.images.write().unwrap().insert(digest.clone(), png);
        Ok(digest)
    }

    pub fn get(&self, digest: &str) -> Option<Vec<u8>> {
        if !is_digest(digest) {
            return None;
        }
        if let Some(png) = self.images.read().unwrap().get(digest) {
            return Some(png.clone());
        }
        let png = fs::read(self.dir.as_ref()?.join(format!("{digest}.png"))).ok()?;
        // never serve a file whose bytes no longer match its name
        (content_digest(&png) == digest).then_some(png)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_names_are_strict() {
        assert!(is_digest(&"a".repeat(64)));
        assert!(!is_digest(&"A".repeat(64)));
        assert!(!is_digest("../../etc/passwd"));
        assert!(!is_digest(&"a".repeat(63)));
    }

    #[test]
    fn images_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let digest = ImageStore::open(dir.path()).unwrap().put(b"png bytes".to_vec()).unwrap();
        let reopened = ImageStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get(&digest).unwrap(), b"png bytes");
        assert!(reopened.get(&"0".repeat(64)).is_none());
    }
}
