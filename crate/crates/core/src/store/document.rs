//! Document-database backend behind a small client abstraction.
//!
//! Documents are limited in size like common document databases (16 MiB),
//! which caps a profile at roughly 250,000 samples. Only an in-process client
//! (`mem://<name>`) ships with the crate; it shares documents between all
//! stores opened on the same URL within one process.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::model::{Profile, ProfileKey};

use super::{format, StoreError};

/// Maximum encoded document size in bytes.
pub const MAX_DOCUMENT_BYTES: usize = 16 * 1024 * 1024;
/// Maximum number of samples per profile document.
pub const MAX_DOCUMENT_SAMPLES: usize = 250_000;

/// A stored document and its index fields.
#[derive(Debug, Clone)]
pub struct Document {
    pub id: String,
    pub key: ProfileKey,
    pub saved_at: u128,
    pub body: Vec<u8>,
}

/// Minimal document-database operations needed by the store.
pub trait DocumentClient: Send + Sync {
    fn insert(&self, key: &ProfileKey, body: Vec<u8>) -> Result<String, StoreError>;
    /// Documents with exactly this key, newest first.
    fn find(&self, key: &ProfileKey) -> Result<Vec<Document>, StoreError>;
    fn get(&self, id: &str) -> Result<Option<Document>, StoreError>;
}

/// In-process client used for `mem://` URLs and tests.
#[derive(Debug, Default)]
pub struct MemoryClient {
    docs: Mutex<Vec<Document>>,
}

impl DocumentClient for MemoryClient {
    fn insert(&self, key: &ProfileKey, body: Vec<u8>) -> Result<String, StoreError> {
        let mut docs = self.docs.lock().unwrap();
        let id = format!("doc-{}", docs.len() + 1);
        let saved_at =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        docs.push(Document { id: id.clone(), key: key.clone(), saved_at, body });
        Ok(id)
    }

    fn find(&self, key: &ProfileKey) -> Result<Vec<Document>, StoreError> {
        let docs = self.docs.lock().unwrap();
        // Insertion order is save order, so reversing gives newest first.
        Ok(docs.iter().rev().filter(|d| d.key == *key).cloned().collect())
    }

    fn get(&self, id: &str) -> Result<Option<Document>, StoreError> {
        Ok(self.docs.lock().unwrap().iter().find(|d| d.id == id).cloned())
    }
}

fn memory_registry() -> &'static Mutex<HashMap<String, Arc<MemoryClient>>> {
    static REG: OnceLock<Mutex<HashMap<String, Arc<MemoryClient>>>> = OnceLock::new();
    REG.get_or_init(Default::default)
}

/// Returns a client for `url`.
pub fn connect(url: &str) -> Result<Arc<dyn DocumentClient>, StoreError> {
    let (scheme, rest) = url.split_once("://").ok_or_else(|| StoreError::UnsupportedUrl(url.to_string()))?;
    match scheme {
        "mem" => {
            let mut reg = memory_registry().lock().unwrap();
            let client = reg.entry(rest.to_string()).or_default().clone();
            Ok(client)
        }
        _ => Err(StoreError::UnsupportedUrl(url.to_string())),
    }
}

pub struct DocumentStore {
    url: String,
    client: Arc<dyn DocumentClient>,
}

impl std::fmt::Debug for DocumentStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DocumentStore").field("url", &self.url).finish()
    }
}

impl DocumentStore {
    pub fn connect(url: &str) -> Result<Self, StoreError> {
        Ok(DocumentStore { url: url.to_string(), client: connect(url)? })
    }

    pub fn with_client(url: &str, client: Arc<dyn DocumentClient>) -> Self {
        DocumentStore { url: url.to_string(), client }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn save(&self, profile: &Profile) -> Result<String, StoreError> {
        let samples = profile.sample_count();
        if samples > MAX_DOCUMENT_SAMPLES {
            return Err(StoreError::TooLarge { samples, bytes: None });
        }
        let body = format::encode(profile);
        if body.len() > MAX_DOCUMENT_BYTES {
            return Err(StoreError::TooLarge { samples, bytes: Some(body.len()) });
        }
        self.client.insert(&profile.key(), body)
    }

    pub fn load(&self, id: &str) -> Result<Profile, StoreError> {
        let doc = self.client.get(id)?.ok_or_else(|| StoreError::NotFound(id.to_string()))?;
        format::decode(&doc.body, &format!("{}/{id}", self.url))
    }

    pub fn find(&self, key: &ProfileKey) -> Result<Vec<(String, Profile)>, StoreError> {
        let mut out = Vec::new();
        for doc in self.client.find(key)? {
            match format::decode(&doc.body, &doc.id) {
                Ok(p) if p.key() == *key => out.push((doc.id, p)),
                Ok(_) => {}
                Err(e) => log::warn!("skipping document {}: {e}", doc.id),
            }
        }
        Ok(out)
    }
}
