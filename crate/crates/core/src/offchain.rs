//! Mutable off-chain store for encrypted documents and their anchor metadata.
//!
//! Records are kept as canonical bytes, either in memory or as one file per
//! key under `store/<namespace>/<id>`. Only the latest version per key is kept;
//! distinct explanation versions live under distinct `subject@dtm` ids.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::crypto::{
    canonical_deserialize, canonical_serialize, sha256, CryptoError, Digest, EncryptedPayload, KeyVault, OrgId,
};
use crate::ledger::OnChainAnchor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespace {
    Explanations,
    TrainingData,
    ModelConfigs,
    ExpertContributions,
    Identities,
}

impl Namespace {
    pub const ALL: [Namespace; 5] = [
        Namespace::Explanations,
        Namespace::TrainingData,
        Namespace::ModelConfigs,
        Namespace::ExpertContributions,
        Namespace::Identities,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Namespace::Explanations => "explanations",
            Namespace::TrainingData => "training_data",
            Namespace::ModelConfigs => "model_configs",
            Namespace::ExpertContributions => "expert_contributions",
            Namespace::Identities => "identities",
        }
    }
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StoreKey {
    pub namespace: Namespace,
    pub id: String,
}

impl StoreKey {
    pub fn new(namespace: Namespace, id: impl Into<String>) -> Result<Self, StoreError> {
        let id = id.into();
        if id.is_empty() {
            return Err(StoreError::EmptyId);
        }
        Ok(StoreKey { namespace, id })
    }

    /// Key of a document about `subject` written at `dtm`.
    pub fn versioned(namespace: Namespace, subject: &str, dtm: u64) -> Result<Self, StoreError> {
        Self::new(namespace, record_id(subject, dtm))
    }
}

impl fmt::Debug for StoreKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.namespace.as_str(), self.id)
    }
}

pub fn record_id(subject: &str, dtm: u64) -> String {
    format!("{subject}@{dtm}")
}

/// `((ID, DTM, H_E), Enc_E)`: the off-chain half of a stored document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffChainRecord {
    pub customer_id: String,
    pub dtm: u64,
    pub explanation_hash: Digest,
    pub payload: EncryptedPayload,
}

impl OffChainRecord {
    pub fn triple(&self) -> OnChainAnchor {
        OnChainAnchor { customer_id: self.customer_id.clone(), dtm: self.dtm, explanation_hash: self.explanation_hash }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StoreError {
    #[error("payload hash does not match declared hash")]
    HashMismatch,
    #[error("store key id must be non-empty")]
    EmptyId,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("stored record is unreadable: {0}")]
    Corrupt(String),
    #[error("store I/O: {0}")]
    Io(String),
}

enum Backend {
    Memory(RwLock<HashMap<StoreKey, Vec<u8>>>),
    Directory { root: PathBuf, write_lock: Mutex<()> },
}

pub struct OffChainStore {
    vault: Arc<KeyVault>,
    backend: Backend,
}

impl fmt::Debug for OffChainStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.backend {
            Backend::Memory(m) => format!("memory({} records)", m.read().len()),
            Backend::Directory { root, .. } => format!("dir({})", root.display()),
        };
        f.debug_struct("OffChainStore").field("backend", &kind).finish()
    }
}

fn encode_file_name(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for b in id.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-' | b'@') && !(out.is_empty() && b == b'.') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_file_name(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

impl OffChainStore {
    pub fn in_memory(vault: Arc<KeyVault>) -> Self {
        OffChainStore { vault, backend: Backend::Memory(RwLock::new(HashMap::new())) }
    }

    pub fn in_directory(vault: Arc<KeyVault>, root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        for ns in Namespace::ALL {
            std::fs::create_dir_all(root.join(ns.as_str())).map_err(|e| StoreError::Io(e.to_string()))?;
        }
        Ok(OffChainStore { vault, backend: Backend::Directory { root, write_lock: Mutex::new(()) } })
    }

    pub fn vault(&self) -> &Arc<KeyVault> {
        &self.vault
    }

    fn path_for(root: &Path, key: &StoreKey) -> PathBuf {
        root.join(key.namespace.as_str()).join(encode_file_name(&key.id))
    }

    /// Stores `record` after checking that its payload decrypts to bytes whose
    /// SHA-256 equals the declared hash.
    pub fn put(&self, key: &StoreKey, record: &OffChainRecord) -> Result<bool, StoreError> {
        let plaintext = self.vault.decrypt_record(&record.payload, &record.payload.key_owner)?;
        if sha256(&plaintext) != record.explanation_hash {
            return Err(StoreError::HashMismatch);
        }
        let bytes = canonical_serialize(record).map_err(|e| StoreError::Corrupt(e.to_string()))?;
        self.put_raw(key, bytes.as_bytes())?;
        Ok(true)
    }

    /// Writes bytes under `key` with no checks at all. This is the storage
    /// layer an attacker with bucket access would write through; audits use it
    /// to inject tampering.
    pub fn put_raw(&self, key: &StoreKey, bytes: &[u8]) -> Result<(), StoreError> {
        match &self.backend {
            Backend::Memory(map) => {
                map.write().insert(key.clone(), bytes.to_vec());
                Ok(())
            }
            Backend::Directory { root, write_lock } => {
                let _guard = write_lock.lock();
                let path = Self::path_for(root, key);
                let tmp = path.with_extension("tmp-write");
                std::fs::write(&tmp, bytes).map_err(|e| StoreError::Io(e.to_string()))?;
                std::fs::rename(&tmp, &path).map_err(|e| StoreError::Io(e.to_string()))
            }
        }
    }

    pub fn get_raw(&self, key: &StoreKey) -> Result<Option<Vec<u8>>, StoreError> {
        match &self.backend {
            Backend::Memory(map) => Ok(map.read().get(key).cloned()),
            Backend::Directory { root, .. } => match std::fs::read(Self::path_for(root, key)) {
                Ok(b) => Ok(Some(b)),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
                Err(e) => Err(StoreError::Io(e.to_string())),
            },
        }
    }

    pub fn get(&self, key: &StoreKey) -> Result<Option<OffChainRecord>, StoreError> {
        match self.get_raw(key)? {
            None => Ok(None),
            Some(bytes) => canonical_deserialize(&bytes).map(Some).map_err(|e| StoreError::Corrupt(e.to_string())),
        }
    }

    pub fn delete(&self, key: &StoreKey) -> Result<bool, StoreError> {
        match &self.backend {
            Backend::Memory(map) => Ok(map.write().remove(key).is_some()),
            Backend::Directory { root, write_lock } => {
                let _guard = write_lock.lock();
                match std::fs::remove_file(Self::path_for(root, key)) {
                    Ok(()) => Ok(true),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
                    Err(e) => Err(StoreError::Io(e.to_string())),
                }
            }
        }
    }

    pub fn keys(&self, namespace: Namespace) -> Result<Vec<StoreKey>, StoreError> {
        let mut keys: Vec<StoreKey> = match &self.backend {
            Backend::Memory(map) => map.read().keys().filter(|k| k.namespace == namespace).cloned().collect(),
            Backend::Directory { root, .. } => {
                let dir = root.join(namespace.as_str());
                let entries = std::fs::read_dir(&dir).map_err(|e| StoreError::Io(e.to_string()))?;
                let mut keys = Vec::new();
                for entry in entries {
                    let entry = entry.map_err(|e| StoreError::Io(e.to_string()))?;
                    let name = entry.file_name().to_string_lossy().into_owned();
                    if name.ends_with(".tmp-write") {
                        continue;
                    }
                    if let Some(id) = decode_file_name(&name) {
                        keys.push(StoreKey { namespace, id });
                    }
                }
                keys
            }
        };
        keys.sort();
        Ok(keys)
    }

    /// Hashes, encrypts and stores `plaintext`, returning the record and the
    /// matching on-chain triple.
    pub fn store_document(
        &self,
        namespace: Namespace,
        subject_id: &str,
        dtm: u64,
        plaintext: &[u8],
        org: &OrgId,
    ) -> Result<(OffChainRecord, OnChainAnchor), StoreError> {
        let record = OffChainRecord {
            customer_id: subject_id.to_string(),
            dtm,
            explanation_hash: sha256(plaintext),
            payload: self.vault.encrypt_record(plaintext, org)?,
        };
        let key = StoreKey::versioned(namespace, subject_id, dtm)?;
        self.put(&key, &record)?;
        let anchor = record.triple();
        Ok((record, anchor))
    }

    pub fn store_explanation_pair(
        &self,
        customer_id: &str,
        dtm: u64,
        plaintext_artifact: &[u8],
        org: &OrgId,
    ) -> Result<(OffChainRecord, OnChainAnchor), StoreError> {
        self.store_document(Namespace::Explanations, customer_id, dtm, plaintext_artifact, org)
    }
}
