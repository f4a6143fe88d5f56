//! Envelope encryption for off-chain records.
//!
//! Each payload is sealed under a fresh 256-bit data key with ChaCha20-Poly1305.
//! The data key is itself sealed ("wrapped") under the owning organization's
//! vault key, with the owner id bound as associated data. Sharing a record with
//! another organization re-wraps the data key and leaves the ciphertext alone.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use parking_lot::RwLock;
use rand::RngCore;
use serde::{Deserialize, Serialize};

const KEY_LEN: usize = 32;
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

/// Identifier of a participating organization.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct OrgId(pub String);

impl OrgId {
    pub fn new(id: impl Into<String>) -> Self {
        OrgId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Debug for OrgId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "OrgId({})", self.0)
    }
}

impl From<&str> for OrgId {
    fn from(s: &str) -> Self {
        OrgId(s.to_string())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("organization {0} has no registered key")]
    UnknownOrg(OrgId),
    #[error("authentication failed")]
    AuthenticationFailure,
    #[error("key vault I/O: {0}")]
    Vault(String),
}

mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        if s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(serde::de::Error::custom("hex must be lowercase"));
        }
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

/// Sealed record: `Enc_E` of an explanation or any other off-chain document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedPayload {
    /// nonce || sealed data key || tag, under the owner's vault key.
    #[serde(with = "hex_bytes")]
    pub wrapped_data_key: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub ciphertext: Vec<u8>,
    #[serde(with = "hex_bytes")]
    pub auth_tag: Vec<u8>,
    pub key_owner: OrgId,
}

/// Whether the vault actually encrypts. `Plaintext` exists for audit tests
/// that need ciphertext edits to surface as hash mismatches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SealingMode {
    Authenticated,
    Plaintext,
}

/// Per-organization key store, optionally persisted to a JSON file.
pub struct KeyVault {
    keys: RwLock<HashMap<OrgId, [u8; KEY_LEN]>>,
    file: Option<PathBuf>,
    mode: SealingMode,
}

impl fmt::Debug for KeyVault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyVault")
            .field("orgs", &self.keys.read().len())
            .field("file", &self.file)
            .field("mode", &self.mode)
            .finish()
    }
}

impl Default for KeyVault {
    fn default() -> Self {
        Self::new()
    }
}

impl KeyVault {
    pub fn new() -> Self {
        KeyVault { keys: RwLock::new(HashMap::new()), file: None, mode: SealingMode::Authenticated }
    }

    pub fn plaintext() -> Self {
        KeyVault { mode: SealingMode::Plaintext, ..Self::new() }
    }

    /// Opens (or creates) a file-backed vault. Keys are stored hex-encoded.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CryptoError> {
        let path = path.as_ref().to_path_buf();
        let mut keys = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CryptoError::Vault(e.to_string()))?;
            let stored: BTreeMap<String, String> =
                serde_json::from_str(&text).map_err(|e| CryptoError::Vault(e.to_string()))?;
            for (org, hex_key) in stored {
                let mut key = [0u8; KEY_LEN];
                hex::decode_to_slice(&hex_key, &mut key).map_err(|e| CryptoError::Vault(e.to_string()))?;
                keys.insert(OrgId(org), key);
            }
        }
        Ok(KeyVault { keys: RwLock::new(keys), file: Some(path), mode: SealingMode::Authenticated })
    }

    pub fn mode(&self) -> SealingMode {
        self.mode
    }

    /// Registers `org` with a fresh random key. Re-registering keeps the existing key.
    pub fn register_org(&self, org: &OrgId) -> Result<(), CryptoError> {
        let mut key = [0u8; KEY_LEN];
        rand::thread_rng().fill_bytes(&mut key);
        self.insert_key(org, key, false)
    }

    pub fn register_org_with_key(&self, org: &OrgId, key: [u8; KEY_LEN]) -> Result<(), CryptoError> {
        self.insert_key(org, key, true)
    }

    fn insert_key(&self, org: &OrgId, key: [u8; KEY_LEN], replace: bool) -> Result<(), CryptoError> {
        let mut keys = self.keys.write();
        if !replace && keys.contains_key(org) {
            return Ok(());
        }
        keys.insert(org.clone(), key);
        if let Some(path) = &self.file {
            let stored: BTreeMap<&str, String> =
                keys.iter().map(|(o, k)| (o.as_str(), hex::encode(k))).collect();
            let text = serde_json::to_string_pretty(&stored).map_err(|e| CryptoError::Vault(e.to_string()))?;
            std::fs::write(path, text).map_err(|e| CryptoError::Vault(e.to_string()))?;
        }
        Ok(())
    }

    pub fn is_registered(&self, org: &OrgId) -> bool {
        self.keys.read().contains_key(org)
    }

    pub fn orgs(&self) -> Vec<OrgId> {
        let mut orgs: Vec<_> = self.keys.read().keys().cloned().collect();
        orgs.sort();
        orgs
    }

    fn org_key(&self, org: &OrgId) -> Result<[u8; KEY_LEN], CryptoError> {
        self.keys.read().get(org).copied().ok_or_else(|| CryptoError::UnknownOrg(org.clone()))
    }

    pub fn encrypt_record(&self, plaintext: &[u8], org: &OrgId) -> Result<EncryptedPayload, CryptoError> {
        let org_key = self.org_key(org)?;
        if self.mode == SealingMode::Plaintext {
            return Ok(EncryptedPayload {
                wrapped_data_key: Vec::new(),
                nonce: Vec::new(),
                ciphertext: plaintext.to_vec(),
                auth_tag: Vec::new(),
                key_owner: org.clone(),
            });
        }
        let mut rng = rand::thread_rng();
        let mut data_key = [0u8; KEY_LEN];
        rng.fill_bytes(&mut data_key);
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);

        let mut ciphertext = plaintext.to_vec();
        let tag = ChaCha20Poly1305::new(Key::from_slice(&data_key))
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), b"", &mut ciphertext)
            .map_err(|_| CryptoError::AuthenticationFailure)?;

        Ok(EncryptedPayload {
            wrapped_data_key: wrap_key(&org_key, org, &data_key)?,
            nonce: nonce.to_vec(),
            ciphertext,
            auth_tag: tag.to_vec(),
            key_owner: org.clone(),
        })
    }

    pub fn decrypt_record(&self, payload: &EncryptedPayload, org: &OrgId) -> Result<Vec<u8>, CryptoError> {
        let org_key = self.org_key(org)?;
        if payload.key_owner != *org {
            return Err(CryptoError::AuthenticationFailure);
        }
        if self.mode == SealingMode::Plaintext {
            return Ok(payload.ciphertext.clone());
        }
        let data_key = unwrap_key(&org_key, org, &payload.wrapped_data_key)?;
        if payload.nonce.len() != NONCE_LEN || payload.auth_tag.len() != TAG_LEN {
            return Err(CryptoError::AuthenticationFailure);
        }
        let mut plaintext = payload.ciphertext.clone();
        ChaCha20Poly1305::new(Key::from_slice(&data_key))
            .decrypt_in_place_detached(
                Nonce::from_slice(&payload.nonce),
                b"",
                &mut plaintext,
                Tag::from_slice(&payload.auth_tag),
            )
            .map_err(|_| CryptoError::AuthenticationFailure)?;
        Ok(plaintext)
    }

    /// Re-wraps the data key for `to_org`. Ciphertext, nonce and tag are untouched.
    pub fn rewrap_key(
        &self,
        payload: &EncryptedPayload,
        from_org: &OrgId,
        to_org: &OrgId,
    ) -> Result<EncryptedPayload, CryptoError> {
        let from_key = self.org_key(from_org)?;
        let to_key = self.org_key(to_org)?;
        if payload.key_owner != *from_org {
            return Err(CryptoError::AuthenticationFailure);
        }
        let mut out = payload.clone();
        out.key_owner = to_org.clone();
        if self.mode == SealingMode::Authenticated {
            let data_key = unwrap_key(&from_key, from_org, &payload.wrapped_data_key)?;
            out.wrapped_data_key = wrap_key(&to_key, to_org, &data_key)?;
        }
        Ok(out)
    }
}

fn wrap_key(org_key: &[u8; KEY_LEN], org: &OrgId, data_key: &[u8; KEY_LEN]) -> Result<Vec<u8>, CryptoError> {
    let mut nonce = [0u8; NONCE_LEN];
    rand::thread_rng().fill_bytes(&mut nonce);
    let mut sealed = data_key.to_vec();
    let tag = ChaCha20Poly1305::new(Key::from_slice(org_key))
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), org.as_str().as_bytes(), &mut sealed)
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    let mut out = Vec::with_capacity(NONCE_LEN + KEY_LEN + TAG_LEN);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&sealed);
    out.extend_from_slice(&tag);
    Ok(out)
}

fn unwrap_key(org_key: &[u8; KEY_LEN], org: &OrgId, wrapped: &[u8]) -> Result<[u8; KEY_LEN], CryptoError> {
    if wrapped.len() != NONCE_LEN + KEY_LEN + TAG_LEN {
        return Err(CryptoError::AuthenticationFailure);
    }
    let (nonce, rest) = wrapped.split_at(NONCE_LEN);
    let (sealed, tag) = rest.split_at(KEY_LEN);
    let mut key = sealed.to_vec();
    ChaCha20Poly1305::new(Key::from_slice(org_key))
        .decrypt_in_place_detached(Nonce::from_slice(nonce), org.as_str().as_bytes(), &mut key, Tag::from_slice(tag))
        .map_err(|_| CryptoError::AuthenticationFailure)?;
    let mut out = [0u8; KEY_LEN];
    out.copy_from_slice(&key);
    Ok(out)
}
