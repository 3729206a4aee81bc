//! Directory-backed profile store.
//!
//! Layout: `<root>/<key hash>/<unix nanos>[-n].profile`. Each key directory
//! holds the append-only history of one [`ProfileKey`]; writers serialize on
//! an advisory lock in that directory and publish files atomically.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::model::{Profile, ProfileKey};

use super::{format, StoreError};

const EXTENSION: &str = "profile";
const LOCK_FILE: &str = ".lock";

/// Stable directory name for a key: hex SHA-256 of its canonical form,
/// truncated to 128 bits.
pub fn key_hash(key: &ProfileKey) -> String {
    let mut h = Sha256::new();
    h.update(key.command.as_bytes());
    for (k, v) in &key.tags {
        h.update([0u8]);
        h.update(k.as_bytes());
        h.update(*b"=");
        h.update(v.as_bytes());
    }
    h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
}

fn io_err(path: &Path, source: io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), source }
}

/// Sort key of a profile file stem `<nanos>` or `<nanos>-<n>`.
fn stem_order(stem: &str) -> Option<(u128, u32)> {
    match stem.split_once('-') {
        Some((t, n)) => Some((t.parse().ok()?, n.parse().ok()?)),
        None => Some((stem.parse().ok()?, 0)),
    }
}

fn sync_dir(dir: &Path) {
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl FileStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        FileStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes `profile` as a new history entry and returns its id
    /// (`<key hash>/<stem>`). Never replaces an existing file.
    pub fn save(&self, profile: &Profile) -> Result<String, StoreError> {
        let hash = key_hash(&profile.key());
        let dir = self.root.join(&hash);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        let lock_path = dir.join(LOCK_FILE);
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .map_err(|e| io_err(&lock_path, e))?;
        lock.lock().map_err(|e| io_err(&lock_path, e))?;

        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let tmp = dir.join(format!(".tmp-{}-{nanos}", std::process::id()));
        let body = format::encode(profile);
        let write = (|| {
            let mut f = File::create(&tmp)?;
            f.write_all(&body)?;
            f.sync_all()
        })();
        if let Err(e) = write {
            let _ = fs::remove_file(&tmp);
            return Err(io_err(&tmp, e));
        }

        // hard_link refuses to replace an existing name, which keeps the
        // history append-only even against writers ignoring the lock.
        let mut n = 0u32;
        let stem = loop {
            let stem = if n == 0 { nanos.to_string() } else { format!("{nanos}-{n}") };
            let target = dir.join(format!("{stem}.{EXTENSION}"));
            match fs::hard_link(&tmp, &target) {
                Ok(()) => break stem,
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => n += 1,
                Err(e) => {
                    let _ = fs::remove_file(&tmp);
                    return Err(io_err(&target, e));
                }
            }
        };
        let _ = fs::remove_file(&tmp);
        sync_dir(&dir);
        drop(lock);
        Ok(format!("{hash}/{stem}"))
    }

    fn path_of(&self, id: &str) -> Option<PathBuf> {
        let (hash, stem) = id.split_once('/')?;
        let valid = |s: &str| !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-');
        (valid(hash) && valid(stem)).then(|| self.root.join(hash).join(format!("{stem}.{EXTENSION}")))
    }

    pub fn load(&self, id: &str) -> Result<Profile, StoreError> {
        let path = self.path_of(id).ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        let text = match fs::read(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.to_string())),
            Err(e) => return Err(io_err(&path, e)),
        };
        format::decode(&text, &path.display().to_string())
    }

    /// Ids stored under `key`'s directory, newest first.
    fn ids_for(&self, key: &ProfileKey) -> Result<Vec<String>, StoreError> {
        let hash = key_hash(key);
        let dir = self.root.join(&hash);
        let entries = match fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(io_err(&dir, e)),
        };
        let mut stems: Vec<((u128, u32), String)> = entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let stem = name.strip_suffix(&format!(".{EXTENSION}"))?.to_string();
                Some((stem_order(&stem)?, stem))
            })
            .collect();
        stems.sort_by(|a, b| b.0.cmp(&a.0));
        Ok(stems.into_iter().map(|(_, s)| format!("{hash}/{s}")).collect())
    }

    /// Every profile whose key equals `key` exactly, newest first. Unreadable
    /// entries are skipped with a warning.
    pub fn find(&self, key: &ProfileKey) -> Result<Vec<(String, Profile)>, StoreError> {
        let mut out = Vec::new();
        for id in self.ids_for(key)? {
            match self.load(&id) {
                Ok(p) if p.key() == *key => out.push((id, p)),
                Ok(_) => {}
                Err(e) => log::warn!("skipping stored profile {id}: {e}"),
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_depends_on_tags() {
        let a = ProfileKey::new("a b", Default::default());
        let mut tags = crate::model::Tags::new();
        tags.insert("x".into(), "1".into());
        let b = ProfileKey::new("a b", tags);
        assert_ne!(key_hash(&a), key_hash(&b));
        assert_eq!(key_hash(&a).len(), 32);
    }

    #[test]
    fn stems_order() {
        assert!(stem_order("10-2") > stem_order("10-1"));
        assert!(stem_order("11") > stem_order("10-5"));
        assert_eq!(stem_order("x"), None);
    }

    #[test]
    fn ids_reject_traversal() {
        let s = FileStore::new("/tmp/none");
        assert!(s.path_of("../etc/passwd").is_none());
        assert!(s.path_of("abc/..").is_none());
        assert!(s.path_of("abc/123-1").is_some());
    }
}
