//! Profile persistence: a directory-backed store with no size limit and an
//! optional document-database backend.

mod document;
mod file;
mod format;

use std::path::PathBuf;

pub use document::{
    connect as connect_document_client, Document, DocumentClient, DocumentStore, MemoryClient, MAX_DOCUMENT_BYTES,
    MAX_DOCUMENT_SAMPLES,
};
pub use file::{key_hash, FileStore};
pub use format::{decode, encode};

use crate::model::{Profile, ProfileKey};

/// Directory used when neither a location nor the environment names one.
pub const ENV_STORE: &str = "SYNMIRROR_STORE";
/// Document-database URL; when set it takes precedence over the directory.
pub const ENV_DB: &str = "SYNMIRROR_DB";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse {origin} at byte {offset}: {message}")]
    Parse { origin: String, offset: usize, message: String },
    #[error("{origin} has schema version {found}, newer than the supported version {supported}")]
    Version { origin: String, found: u32, supported: u32 },
    #[error("no stored profile with id {0}")]
    NotFound(String),
    #[error(
        "profile too large for the document backend ({samples} samples{}); documents are limited to 16 MiB, \
         about 250,000 samples — use the file backend (a directory location) instead",
        .bytes.map(|b| format!(", {b} bytes")).unwrap_or_default()
    )]
    TooLarge { samples: usize, bytes: Option<usize> },
    #[error("unsupported store URL {0} (built-in client: mem://<name>)")]
    UnsupportedUrl(String),
}

/// Where profiles live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StoreLocation {
    Dir(PathBuf),
    Url(String),
}

impl StoreLocation {
    /// Interprets `s` as a URL when it contains `://`, else as a directory.
    pub fn parse(s: &str) -> Self {
        if s.contains("://") {
            StoreLocation::Url(s.to_string())
        } else {
            StoreLocation::Dir(PathBuf::from(s))
        }
    }

    /// `SYNMIRROR_DB`, then `SYNMIRROR_STORE`, then the per-user data
    /// directory.
    pub fn from_env() -> Self {
        if let Some(url) = std::env::var(ENV_DB).ok().filter(|s| !s.trim().is_empty()) {
            return StoreLocation::Url(url);
        }
        if let Some(dir) = std::env::var_os(ENV_STORE).filter(|s| !s.is_empty()) {
            return StoreLocation::Dir(dir.into());
        }
        StoreLocation::Dir(default_dir())
    }
}

impl std::fmt::Display for StoreLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StoreLocation::Dir(p) => write!(f, "{}", p.display()),
            StoreLocation::Url(u) => f.write_str(u),
        }
    }
}

/// `$XDG_DATA_HOME/synmirror`, falling back to `~/.local/share/synmirror`.
pub fn default_dir() -> PathBuf {
    if let Some(d) = std::env::var_os("XDG_DATA_HOME").filter(|s| !s.is_empty()) {
        return PathBuf::from(d).join("synmirror");
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".local/share/synmirror")
}

#[derive(Debug)]
enum Backend {
    File(FileStore),
    Document(DocumentStore),
}

/// A profile store on either backend.
#[derive(Debug)]
pub struct Store {
    location: StoreLocation,
    backend: Backend,
}

impl Store {
    pub fn open(location: &StoreLocation) -> Result<Self, StoreError> {
        let backend = match location {
            StoreLocation::Dir(p) => Backend::File(FileStore::new(p)),
            StoreLocation::Url(u) => Backend::Document(DocumentStore::connect(u)?),
        };
        Ok(Store { location: location.clone(), backend })
    }

    pub fn location(&self) -> &StoreLocation {
        &self.location
    }

    /// Directory of the file backend, if that is the backend in use.
    pub fn dir(&self) -> Option<&std::path::Path> {
        match &self.backend {
            Backend::File(f) => Some(f.root()),
            Backend::Document(_) => None,
        }
    }

    /// Appends `profile` to its key's history and returns the new id.
    pub fn save(&self, profile: &Profile) -> Result<String, StoreError> {
        match &self.backend {
            Backend::File(f) => f.save(profile),
            Backend::Document(d) => d.save(profile),
        }
    }

    pub fn load(&self, id: &str) -> Result<Profile, StoreError> {
        match &self.backend {
            Backend::File(f) => f.load(id),
            Backend::Document(d) => d.load(id),
        }
    }

    /// Profiles with exactly `key`, newest first, with their ids.
    pub fn find_with_ids(&self, key: &ProfileKey) -> Result<Vec<(String, Profile)>, StoreError> {
        match &self.backend {
            Backend::File(f) => f.find(key),
            Backend::Document(d) => d.find(key),
        }
    }

    /// Profiles with exactly `key`, newest first.
    pub fn find(&self, key: &ProfileKey) -> Result<Vec<Profile>, StoreError> {
        Ok(self.find_with_ids(key)?.into_iter().map(|(_, p)| p).collect())
    }
}

/// `Store::open(location)?.save(profile)`.
pub fn save(profile: &Profile, location: &StoreLocation) -> Result<String, StoreError> {
    Store::open(location)?.save(profile)
}

/// `Store::open(location)?.find(key)`.
pub fn find(key: &ProfileKey, location: &StoreLocation) -> Result<Vec<Profile>, StoreError> {
    Store::open(location)?.find(key)
}

/// `Store::open(location)?.load(id)`.
pub fn load(id: &str, location: &StoreLocation) -> Result<Profile, StoreError> {
    Store::open(location)?.load(id)
}
