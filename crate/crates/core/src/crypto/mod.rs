//! Hashing, canonical serialization and envelope encryption.

pub mod canonical;
pub mod digest;
pub mod envelope;

pub use canonical::{
    canonical_deserialize, canonical_digest, canonical_serialize, CanonicalBytes, CanonicalError,
    CanonicalValue,
};
pub use digest::{sha256, Digest};
pub use envelope::{CryptoError, EncryptedPayload, KeyVault, OrgId};
