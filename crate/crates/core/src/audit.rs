//! Tamper verdicts for stored documents and consent replicas, and the batch
//! tamper-sweep experiment.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::consent::{consent_hash, ConsentRegistry};
use crate::crypto::{canonical_serialize, sha256, KeyVault, OrgId};
use crate::ledger::{AnchorPayload, AnchorTx, Ledger, NetworkConfig, Preset};
use crate::offchain::{Namespace, OffChainRecord, OffChainStore, StoreError, StoreKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TamperReason {
    Clean,
    MissingOnChainTriple,
    HashMismatch,
    MissingOffChainRecord,
    DecryptFailure,
    ConsentReplicaMismatch,
    DataWithdrawn,
}

impl TamperReason {
    pub fn tau(self) -> u8 {
        match self {
            TamperReason::Clean | TamperReason::DataWithdrawn => 0,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperVerdict {
    pub tau: u8,
    pub reason: TamperReason,
    pub details: String,
}

impl TamperVerdict {
    pub fn new(reason: TamperReason, details: impl Into<String>) -> Self {
        TamperVerdict { tau: reason.tau(), reason, details: details.into() }
    }

    pub fn is_tampered(&self) -> bool {
        self.tau == 1
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemVerdict {
    pub namespace: Namespace,
    pub id: String,
    pub verdict: TamperVerdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub total_files: u64,
    pub tampered_found: u64,
    /// Simulated cost: audit steps plus per-finding chain investigation.
    pub elapsed_ops: u64,
    #[serde(skip)]
    pub wall_time: Duration,
    pub verdicts: Vec<ItemVerdict>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AuditError {
    #[error("consent audit needs at least two organizations")]
    FewerThanTwoOrgs,
    #[error("unknown expert {0}")]
    UnknownExpert(String),
    #[error("need at least one file to tamper, got count {count} and fraction {fraction}")]
    InsufficientFiles { count: usize, fraction: f64 },
    #[error("experiment setup failed: {0}")]
    Setup(String),
}

/// Read-only view over the state an auditor inspects.
#[derive(Clone, Copy)]
pub struct Auditor<'a> {
    pub ledger: &'a Ledger,
    pub store: &'a OffChainStore,
    pub consents: Option<&'a ConsentRegistry>,
}

impl<'a> Auditor<'a> {
    pub fn new(ledger: &'a Ledger, store: &'a OffChainStore) -> Self {
        Auditor { ledger, store, consents: None }
    }

    pub fn with_consents(mut self, consents: &'a ConsentRegistry) -> Self {
        self.consents = Some(consents);
        self
    }

    pub fn audit_explanation(&self, customer_id: &str, dtm: u64) -> TamperVerdict {
        self.audit_record(Namespace::Explanations, customer_id, dtm).0
    }

    /// Audits one stored document; returns the verdict and the number of
    /// audit steps performed.
    pub fn audit_record(&self, namespace: Namespace, subject_id: &str, dtm: u64) -> (TamperVerdict, u64) {
        let key = match StoreKey::versioned(namespace, subject_id, dtm) {
            Ok(k) => k,
            Err(e) => return (TamperVerdict::new(TamperReason::MissingOffChainRecord, e.to_string()), 1),
        };
        self.audit_key(&key, subject_id, dtm)
    }

    fn audit_key(&self, key: &StoreKey, subject_id: &str, dtm: u64) -> (TamperVerdict, u64) {
        use TamperReason::*;
        let mut ops = 1;
        let record: OffChainRecord = match self.store.get(key) {
            Ok(Some(r)) => r,
            Ok(None) => {
                let withdrawn = self.consents.is_some_and(|c| c.withdrawal_processed(subject_id));
                let v = if withdrawn {
                    TamperVerdict::new(DataWithdrawn, format!("{subject_id} withdrew; deletion is lawful"))
                } else {
                    TamperVerdict::new(MissingOffChainRecord, format!("no off-chain record for {key:?}"))
                };
                return (v, ops);
            }
            Err(StoreError::Corrupt(e)) => return (TamperVerdict::new(DecryptFailure, format!("unreadable record: {e}")), ops),
            Err(e) => return (TamperVerdict::new(MissingOffChainRecord, e.to_string()), ops),
        };

        ops += 1;
        let triple = record.triple();
        if triple.customer_id != subject_id || triple.dtm != dtm {
            return (TamperVerdict::new(MissingOnChainTriple, "record metadata does not match its key"), ops);
        }
        if self.ledger.find_triple(&triple).is_none() {
            return (
                TamperVerdict::new(MissingOnChainTriple, format!("({subject_id}, {dtm}, {}) not on chain", triple.explanation_hash)),
                ops,
            );
        }

        ops += 1;
        let plaintext = match self.store.vault().decrypt_record(&record.payload, &record.payload.key_owner) {
            Ok(p) => p,
            Err(e) => return (TamperVerdict::new(DecryptFailure, e.to_string()), ops),
        };

        ops += 1;
        let actual = sha256(&plaintext);
        if actual != triple.explanation_hash {
            return (
                TamperVerdict::new(HashMismatch, format!("anchored {} but content hashes to {actual}", triple.explanation_hash)),
                ops,
            );
        }
        (TamperVerdict::new(Clean, ""), ops)
    }

    /// Audits every record in `namespace`. Each finding is followed by a walk
    /// of the whole chain to locate related anchors, so cost grows with the
    /// number of tampered files.
    pub fn audit_namespace(&self, namespace: Namespace) -> Result<AuditReport, StoreError> {
        let started = Instant::now();
        let keys = self.store.keys(namespace)?;
        let mut report = AuditReport {
            total_files: keys.len() as u64,
            tampered_found: 0,
            elapsed_ops: 0,
            wall_time: Duration::ZERO,
            verdicts: Vec::with_capacity(keys.len()),
        };
        for key in keys {
            let Some((subject, dtm)) = split_record_id(&key.id) else {
                report.tampered_found += 1;
                report.elapsed_ops += 1;
                report.verdicts.push(ItemVerdict {
                    namespace,
                    id: key.id.clone(),
                    verdict: TamperVerdict::new(TamperReason::MissingOnChainTriple, "store key is not subject@dtm"),
                });
                continue;
            };
            let (verdict, ops) = self.audit_key(&key, subject, dtm);
            report.elapsed_ops += ops;
            if verdict.is_tampered() {
                report.tampered_found += 1;
                report.elapsed_ops += self.investigate(subject);
            }
            report.verdicts.push(ItemVerdict { namespace, id: key.id, verdict });
        }
        report.wall_time = started.elapsed();
        Ok(report)
    }

    fn investigate(&self, subject: &str) -> u64 {
        let blocks = self.ledger.blocks();
        let hits = blocks
            .iter()
            .flat_map(|b| &b.tx_list)
            .filter(|tx| matches!(&tx.payload, AnchorPayload::Explanation(a) if a.customer_id == subject))
            .count() as u64;
        blocks.len() as u64 + hits
    }
}

fn split_record_id(id: &str) -> Option<(&str, u64)> {
    let (subject, dtm) = id.rsplit_once('@')?;
    Some((subject, dtm.parse().ok()?))
}

/// Every unordered pair of organizations whose replica hashes differ.
pub fn consent_mismatch_pairs<H: PartialEq>(hashes: &[(OrgId, H)]) -> Vec<(OrgId, OrgId)> {
    let mut pairs = Vec::new();
    for i in 0..hashes.len() {
        for j in i + 1..hashes.len() {
            if hashes[i].1 != hashes[j].1 {
                pairs.push((hashes[i].0.clone(), hashes[j].0.clone()));
            }
        }
    }
    pairs
}

/// Compares `expert_id`'s consent replicas across organizations. With a
/// ledger, each replica is also checked against its latest consent anchor.
pub fn audit_consent(
    registry: &ConsentRegistry,
    expert_id: &str,
    ledger: Option<&Ledger>,
) -> Result<TamperVerdict, AuditError> {
    if registry.orgs().len() < 2 {
        return Err(AuditError::FewerThanTwoOrgs);
    }
    if registry.home_org(expert_id).is_none() {
        return Err(AuditError::UnknownExpert(expert_id.to_string()));
    }
    let hashes = registry.replica_hashes(expert_id);
    let pairs = consent_mismatch_pairs(&hashes);
    if !pairs.is_empty() {
        let listed: Vec<String> = pairs.iter().map(|(a, b)| format!("{a}!={b}")).collect();
        return Ok(TamperVerdict::new(TamperReason::ConsentReplicaMismatch, listed.join(",")));
    }
    if let Some(ledger) = ledger {
        let off: Vec<String> = registry
            .orgs()
            .iter()
            .filter_map(|org| {
                let state = registry.state_at(org, expert_id)?;
                match ledger.query_consent_hash(expert_id, org) {
                    Some(anchored) if anchored == consent_hash(state) => None,
                    Some(_) => Some(format!("{org} differs from its anchor")),
                    None => None,
                }
            })
            .collect();
        if !off.is_empty() {
            return Ok(TamperVerdict::new(TamperReason::ConsentReplicaMismatch, off.join(",")));
        }
    }
    Ok(TamperVerdict::new(TamperReason::Clean, ""))
}

/// An anchored corpus of synthetic explanation artifacts.
pub struct Corpus {
    pub ledger: Ledger,
    pub store: OffChainStore,
    pub entries: Vec<(String, u64)>,
}

impl Corpus {
    pub fn build(count: usize, seed: u64, vault: Arc<KeyVault>) -> Result<Corpus, AuditError> {
        let setup = |e: &dyn std::fmt::Display| AuditError::Setup(e.to_string());
        let config = NetworkConfig::preset(Preset::FabricLike, 4, seed);
        let orgs = config.org_ids();
        for org in &orgs {
            vault.register_org(org).map_err(|e| setup(&e))?;
        }
        let mut ledger = Ledger::new(config).map_err(|e| setup(&e))?;
        let store = OffChainStore::in_memory(vault);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            let customer = format!("cust-{i:05}");
            let dtm = 1_700_000_000_000 + i as u64 * 1_000;
            let artifact = SyntheticArtifact {
                customer_id: customer.clone(),
                dtm,
                p_default: rng.gen_range(0.0..1.0),
                relevances: (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let bytes = canonical_serialize(&artifact).map_err(|e| setup(&e))?;
            let org = &orgs[i % orgs.len()];
            let (_, anchor) = store.store_explanation_pair(&customer, dtm, bytes.as_bytes(), org).map_err(|e| setup(&e))?;
            ledger
                .submit_tx(AnchorTx::new(AnchorPayload::Explanation(anchor), org.clone(), i as u64))
                .map_err(|e| setup(&e))?;
            entries.push((customer, dtm));
        }
        ledger.flush();
        Ok(Corpus { ledger, store, entries })
    }

    pub fn auditor(&self) -> Auditor<'_> {
        Auditor::new(&self.ledger, &self.store)
    }

    pub fn key(&self, index: usize) -> StoreKey {
        let (c, d) = &self.entries[index];
        StoreKey::versioned(Namespace::Explanations, c, *d).expect("non-empty id")
    }

    /// Flips one ciphertext byte in the stored record at `index`.
    pub fn flip_ciphertext_byte(&self, index: usize, rng: &mut impl Rng) {
        let key = self.key(index);
        let mut record = self.store.get(&key).expect("readable").expect("present");
        let at = rng.gen_range(0..record.payload.ciphertext.len());
        record.payload.ciphertext[at] ^= rng.gen_range(1..=255u8);
        let bytes = canonical_serialize(&record).expect("record has no floats");
        self.store.put_raw(&key, bytes.as_bytes()).expect("memory store");
    }
}

#[derive(Serialize)]
struct SyntheticArtifact {
    customer_id: String,
    dtm: u64,
    p_default: f64,
    relevances: Vec<f64>,
}

/// Builds an anchored corpus of `file_count` documents, tampers
/// ⌊fraction·count⌋ of them by ciphertext byte flips, and audits them all.
pub fn batch_audit_experiment(file_count: usize, tamper_fraction: f64, seed: u64) -> Result<AuditReport, AuditError> {
    if !(0.0..=1.0).contains(&tamper_fraction) {
        return Err(AuditError::Setup(format!("tamper fraction {tamper_fraction} outside [0, 1]")));
    }
    let to_tamper = (tamper_fraction * file_count as f64 + 1e-9).floor() as usize;
    if file_count == 0 || (tamper_fraction > 0.0 && to_tamper == 0) {
        return Err(AuditError::InsufficientFiles { count: file_count, fraction: tamper_fraction });
    }
    let corpus = Corpus::build(file_count, seed, Arc::new(KeyVault::new()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a3b_e1f0);
    for index in sample(&mut rng, file_count, to_tamper) {
        corpus.flip_ciphertext_byte(index, &mut rng);
    }
    corpus.auditor().audit_namespace(Namespace::Explanations).map_err(|e| AuditError::Setup(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consent::{Ca, ConsentEvent, ConsentEventKind};

    #[test]
    fn verdict_reason_fixes_tau() {
        for r in [
            TamperReason::Clean,
            TamperReason::MissingOnChainTriple,
            TamperReason::HashMismatch,
            TamperReason::MissingOffChainRecord,
            TamperReason::DecryptFailure,
            TamperReason::ConsentReplicaMismatch,
            TamperReason::DataWithdrawn,
        ] {
            let v = TamperVerdict::new(r, "");
            assert_eq!(v.tau == 0, matches!(r, TamperReason::Clean | TamperReason::DataWithdrawn));
        }
    }

    #[test]
    fn clean_then_flip_then_fork() {
        let corpus = Corpus::build(5, 1, Arc::new(KeyVault::new())).unwrap();
        let (c, d) = corpus.entries[2].clone();
        assert_eq!(corpus.auditor().audit_explanation(&c, d).reason, TamperReason::Clean);

        let forked = corpus.ledger.fork_excluding(|tx| matches!(&tx.payload, AnchorPayload::Explanation(a) if a.customer_id == c));
        assert!(forked.validate_chain().valid);
        let v = Auditor::new(&forked, &corpus.store).audit_explanation(&c, d);
        assert_eq!(v.reason, TamperReason::MissingOnChainTriple);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        corpus.flip_ciphertext_byte(2, &mut rng);
        assert_eq!(corpus.auditor().audit_explanation(&c, d).reason, TamperReason::DecryptFailure);
    }

    #[test]
    fn plaintext_mode_reports_hash_mismatch() {
        let corpus = Corpus::build(3, 2, Arc::new(KeyVault::plaintext())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        corpus.flip_ciphertext_byte(0, &mut rng);
        let (c, d) = corpus.entries[0].clone();
        assert_eq!(corpus.auditor().audit_explanation(&c, d).reason, TamperReason::HashMismatch);
    }

    #[test]
    fn deletion_needs_processed_withdrawal() {
        let corpus = Corpus::build(2, 4, Arc::new(KeyVault::new())).unwrap();
        let (c, d) = corpus.entries[0].clone();
        corpus.store.delete(&corpus.key(0)).unwrap();
        assert_eq!(corpus.auditor().audit_explanation(&c, d).reason, TamperReason::MissingOffChainRecord);

        let orgs: Vec<OrgId> = corpus.ledger.config().org_ids();
        let mut reg = ConsentRegistry::new(orgs.clone());
        reg.init_consent(&c, &orgs[0], 1).unwrap();
        for kind in [ConsentEventKind::RequestWithdrawal, ConsentEventKind::ProcessWithdrawal] {
            reg.apply_everywhere(&c, &ConsentEvent { kind, actor: c.clone(), dtm: 2 }).unwrap();
        }
        let v = corpus.auditor().with_consents(&reg).audit_explanation(&c, d);
        assert_eq!((v.tau, v.reason), (0, TamperReason::DataWithdrawn));
    }

    #[test]
    fn consent_pairs_match_brute_force() {
        let orgs: Vec<OrgId> = (1..=4).map(|i| OrgId(format!("org{i}"))).collect();
        let mut reg = ConsentRegistry::new(orgs.clone());
        reg.init_consent("h", &orgs[0], 1).unwrap();
        assert_eq!(audit_consent(&reg, "h", None).unwrap().tau, 0);
        reg.tamper_replica(&orgs[0], "h", |s| s.ca = Ca::Invalid);
        reg.tamper_replica(&orgs[1], "h", |s| s.ca = Ca::Invalid);
        let v = audit_consent(&reg, "h", None).unwrap();
        assert_eq!(v.reason, TamperReason::ConsentReplicaMismatch);
        let hashes = reg.replica_hashes("h");
        let mut brute = 0;
        for a in &hashes {
            for b in &hashes {
                if a.0 < b.0 && a.1 != b.1 {
                    brute += 1;
                    assert!(v.details.contains(&format!("{}!={}", a.0, b.0)));
                }
            }
        }
        assert_eq!(brute, 4);
        assert_eq!(consent_mismatch_pairs(&hashes).len(), brute);

        let single = ConsentRegistry::new(vec![OrgId::from("org1")]);
        assert_eq!(audit_consent(&single, "h", None), Err(AuditError::FewerThanTwoOrgs));
    }

    #[test]
    fn batch_counts_and_cost_trend() {
        let none = batch_audit_experiment(50, 0.0, 7).unwrap();
        assert_eq!(none.tampered_found, 0);
        let tenth = batch_audit_experiment(200, 0.1, 7).unwrap();
        assert_eq!(tenth.tampered_found, 20);
        assert_eq!(tenth.verdicts.iter().filter(|v| v.verdict.tau == 1).count(), 20);
        let low = batch_audit_experiment(200, 0.02, 7).unwrap();
        let high = batch_audit_experiment(200, 0.20, 7).unwrap();
        assert!(low.elapsed_ops <= high.elapsed_ops);
        assert!(matches!(batch_audit_experiment(10, 0.05, 1), Err(AuditError::InsufficientFiles { .. })));
    }
}
