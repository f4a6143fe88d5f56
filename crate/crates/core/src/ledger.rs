//! Simulated permissioned ledger.
//!
//! A single ordering service batches anchor transactions into hash-chained
//! blocks on a simulated millisecond clock. Each block is disseminated to every
//! organization node, endorsed per transaction by each organization, and is
//! committed once the slowest node has validated it. All random delays are
//! drawn from seeded streams keyed by what they describe (transaction id, or
//! block height and node), so the block layout does not depend on how many
//! organizations participate and latency only grows as nodes are added.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crypto::{canonical_deserialize, canonical_digest, canonical_serialize, Digest, OrgId};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LedgerError {
    #[error("malformed transaction: {0}")]
    MalformedTx(String),
    #[error("duplicate transaction {0}")]
    DuplicateTx(Digest),
    #[error("no committed transactions")]
    EmptyLedger,
    #[error("negative input")]
    NegativeInput,
    #[error("invalid network configuration: {0}")]
    BadConfig(String),
    #[error("ledger file corrupt at height {height}")]
    Corrupt { height: u64 },
    #[error("ledger file I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AnchorKind {
    ExplanationAnchor,
    ConsentAnchor,
    ModelConfigAnchor,
    ActorCredentialAnchor,
}

/// `(ID, DTM, H_E)`: the on-chain half of a stored explanation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OnChainAnchor {
    pub customer_id: String,
    pub dtm: u64,
    pub explanation_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentAnchorPayload {
    pub expert_id: String,
    pub org_id: OrgId,
    pub consent_hash: Digest,
    pub dtm: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnchorPayload {
    pub model_id: String,
    pub iteration: u64,
    pub config_hash: Digest,
    pub dtm: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CredentialAnchorPayload {
    pub actor_id: String,
    pub org_id: OrgId,
    pub role: String,
    pub credential_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorPayload {
    Explanation(OnChainAnchor),
    Consent(ConsentAnchorPayload),
    ModelConfig(ModelAnchorPayload),
    Credential(CredentialAnchorPayload),
}

impl AnchorPayload {
    pub fn kind(&self) -> AnchorKind {
        match self {
            AnchorPayload::Explanation(_) => AnchorKind::ExplanationAnchor,
            AnchorPayload::Consent(_) => AnchorKind::ConsentAnchor,
            AnchorPayload::ModelConfig(_) => AnchorKind::ModelConfigAnchor,
            AnchorPayload::Credential(_) => AnchorKind::ActorCredentialAnchor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorTx {
    pub tx_id: Digest,
    pub kind: AnchorKind,
    pub payload: AnchorPayload,
    pub submitter_org: OrgId,
    pub submit_time: u64,
}

impl AnchorTx {
    pub fn new(payload: AnchorPayload, submitter_org: OrgId, submit_time: u64) -> Self {
        let kind = payload.kind();
        let tx_id = Self::compute_id(kind, &payload, &submitter_org);
        AnchorTx { tx_id, kind, payload, submitter_org, submit_time }
    }

    pub fn compute_id(kind: AnchorKind, payload: &AnchorPayload, submitter_org: &OrgId) -> Digest {
        canonical_digest(&(kind, payload, submitter_org)).expect("anchor payloads hold no floats")
    }

    fn check(&self) -> Result<(), String> {
        if self.kind != self.payload.kind() {
            return Err("kind tag does not match payload".into());
        }
        if self.tx_id != Self::compute_id(self.kind, &self.payload, &self.submitter_org) {
            return Err("tx_id does not match contents".into());
        }
        if self.submitter_org.as_str().is_empty() {
            return Err("empty submitter org".into());
        }
        match &self.payload {
            AnchorPayload::Explanation(a) if a.customer_id.is_empty() || a.dtm == 0 => {
                Err("explanation anchor needs customer id and dtm > 0".into())
            }
            AnchorPayload::Consent(c) if c.expert_id.is_empty() => Err("empty expert id".into()),
            AnchorPayload::Credential(c) if c.actor_id.is_empty() => Err("empty actor id".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    pub prev_hash: Digest,
    pub tx_list: Vec<AnchorTx>,
    pub tx_root: Digest,
    pub commit_time: u64,
    pub hash: Digest,
}

impl Block {
    pub fn compute_tx_root(txs: &[AnchorTx]) -> Digest {
        canonical_digest(txs).expect("anchor payloads hold no floats")
    }

    pub fn compute_hash(height: u64, prev_hash: &Digest, tx_root: &Digest, commit_time: u64) -> Digest {
        canonical_digest(&(height, prev_hash, tx_root, commit_time)).expect("integers and digests only")
    }

    fn seal(height: u64, prev_hash: Digest, tx_list: Vec<AnchorTx>, commit_time: u64) -> Block {
        let tx_root = Self::compute_tx_root(&tx_list);
        let hash = Self::compute_hash(height, &prev_hash, &tx_root, commit_time);
        Block { height, prev_hash, tx_list, tx_root, commit_time, hash }
    }

    fn genesis() -> Block {
        Block::seal(0, Digest::ZERO, Vec::new(), 0)
    }
}

/// Named delay profiles. Their relative ordering is calibration, not measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    FabricLike,
    EthereumLike,
}

impl std::str::FromStr for Preset {
    type Err = LedgerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fabric-like" => Ok(Preset::FabricLike),
            "ethereum-like" => Ok(Preset::EthereumLike),
            other => Err(LedgerError::BadConfig(format!("unknown preset {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub org_count: u32,
    pub hop_latency_mean_ms: f64,
    pub hop_latency_jitter_ms: f64,
    pub block_interval_ms: u64,
    pub max_txs_per_block: usize,
    /// Endorsement cost per transaction per organization.
    pub validation_delay_ms_per_tx: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn preset(preset: Preset, org_count: u32, seed: u64) -> Self {
        match preset {
            Preset::FabricLike => NetworkConfig {
                org_count,
                hop_latency_mean_ms: 15.0,
                hop_latency_jitter_ms: 5.0,
                block_interval_ms: 500,
                max_txs_per_block: 100,
                validation_delay_ms_per_tx: 0.5,
                seed,
            },
            Preset::EthereumLike => NetworkConfig {
                org_count,
                hop_latency_mean_ms: 120.0,
                hop_latency_jitter_ms: 60.0,
                block_interval_ms: 2000,
                max_txs_per_block: 200,
                validation_delay_ms_per_tx: 2.0,
                seed,
            },
        }
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        let bad = |m: &str| Err(LedgerError::BadConfig(m.to_string()));
        if self.org_count == 0 {
            return bad("org_count must be at least 1");
        }
        if self.block_interval_ms == 0 || self.max_txs_per_block == 0 {
            return bad("block interval and batch size must be positive");
        }
        if !(self.hop_latency_mean_ms >= 0.0
            && self.hop_latency_jitter_ms >= 0.0
            && self.validation_delay_ms_per_tx >= 0.0)
        {
            return bad("delays must be non-negative");
        }
        if self.hop_latency_jitter_ms > self.hop_latency_mean_ms {
            return bad("jitter may not exceed mean hop latency");
        }
        Ok(())
    }

    pub fn org_ids(&self) -> Vec<OrgId> {
        (1..=self.org_count).map(|i| OrgId(format!("org{i}"))).collect()
    }

    fn hop(&self, stream: u64, index: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, stream, index));
        let u: f64 = rng.gen();
        self.hop_latency_mean_ms + self.hop_latency_jitter_ms * (2.0 * u - 1.0)
    }
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the three words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: Digest,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainValidity {
    pub valid: bool,
    pub first_bad_height: Option<u64>,
}

impl ChainValidity {
    fn ok() -> Self {
        ChainValidity { valid: true, first_bad_height: None }
    }
    fn bad(height: u64) -> Self {
        ChainValidity { valid: false, first_bad_height: Some(height) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub per_tx_latency_ms: Vec<u64>,
    pub mean_latency_ms: f64,
    pub median_latency_ms: f64,
    pub p95_latency_ms: f64,
    pub throughput_tps: f64,
    pub node_count: u32,
    pub tx_count: usize,
}

#[derive(Debug, Clone)]
struct QueuedTx {
    tx: AnchorTx,
    arrival: u64,
    seq: u64,
}

/// Location of a committed transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxLocation {
    pub height: u64,
    pub index: usize,
}

#[derive(Debug, Clone)]
pub struct Ledger {
    config: NetworkConfig,
    blocks: Vec<Block>,
    queue: Vec<QueuedTx>,
    seen: HashSet<Digest>,
    next_seq: u64,
    anchors: HashMap<OnChainAnchor, TxLocation>,
    /// Latest anchored consent hash per replica, by the anchor's own dtm.
    consents: HashMap<(String, OrgId), (Digest, u64, TxLocation)>,
}

impl Ledger {
    pub fn new(config: NetworkConfig) -> Result<Self, LedgerError> {
        config.validate()?;
        Ok(Self::from_blocks(config, vec![Block::genesis()]))
    }

    fn from_blocks(config: NetworkConfig, blocks: Vec<Block>) -> Self {
        let mut ledger = Ledger {
            config,
            blocks,
            queue: Vec::new(),
            seen: HashSet::new(),
            next_seq: 0,
            anchors: HashMap::new(),
            consents: HashMap::new(),
        };
        ledger.reindex();
        ledger
    }

    fn reindex(&mut self) {
        self.anchors.clear();
        self.consents.clear();
        self.seen = self.queue.iter().map(|q| q.tx.tx_id).collect();
        for b in &self.blocks {
            for (i, tx) in b.tx_list.iter().enumerate() {
                self.seen.insert(tx.tx_id);
                Self::index_tx(&mut self.anchors, &mut self.consents, tx, TxLocation { height: b.height, index: i });
            }
        }
    }

    fn index_tx(
        anchors: &mut HashMap<OnChainAnchor, TxLocation>,
        consents: &mut HashMap<(String, OrgId), (Digest, u64, TxLocation)>,
        tx: &AnchorTx,
        loc: TxLocation,
    ) {
        match &tx.payload {
            AnchorPayload::Explanation(a) => {
                anchors.entry(a.clone()).or_insert(loc);
            }
            AnchorPayload::Consent(c) => {
                // commit order can differ from dtm order; the newest state wins
                let key = (c.expert_id.clone(), c.org_id.clone());
                if consents.get(&key).is_none_or(|(_, dtm, _)| c.dtm >= *dtm) {
                    consents.insert(key, (c.consent_hash, c.dtm, loc));
                }
            }
            _ => {}
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn committed_txs(&self) -> impl Iterator<Item = (&Block, &AnchorTx)> {
        self.blocks.iter().flat_map(|b| b.tx_list.iter().map(move |tx| (b, tx)))
    }

    pub fn submit_tx(&mut self, tx: AnchorTx) -> Result<Receipt, LedgerError> {
        tx.check().map_err(LedgerError::MalformedTx)?;
        if self.seen.contains(&tx.tx_id) {
            return Err(LedgerError::DuplicateTx(tx.tx_id));
        }
        // the n-th submission sees the n-th jitter draw, whoever submits it
        let arrival = tx.submit_time + self.config.hop(0, self.next_seq).ceil() as u64;
        self.seen.insert(tx.tx_id);
        let receipt = Receipt { tx_id: tx.tx_id, accepted: true };
        self.queue.push(QueuedTx { tx, arrival, seq: self.next_seq });
        self.next_seq += 1;
        Ok(receipt)
    }

    /// Cuts and commits every block whose batch closes at or before `until`.
    pub fn run_ordering(&mut self, until: u64) -> Vec<Block> {
        self.queue.sort_by_key(|q| (q.arrival, q.seq));
        let mut produced = Vec::new();
        while let Some(first) = self.queue.first() {
            let timeout = first.arrival.saturating_add(self.config.block_interval_ms);
            let in_window = self.queue.iter().take_while(|q| q.arrival <= timeout).count();
            let (take, cut) = if in_window >= self.config.max_txs_per_block {
                let n = self.config.max_txs_per_block;
                (n, self.queue[n - 1].arrival)
            } else {
                (in_window, timeout)
            };
            if cut > until {
                break;
            }
            let batch: Vec<AnchorTx> = self.queue.drain(..take).map(|q| q.tx).collect();
            let prev = self.blocks.last().expect("genesis present");
            let height = prev.height + 1;
            let commit_time = self.commit_time(height, cut, prev.commit_time, batch.len());
            let block = Block::seal(height, prev.hash, batch, commit_time);
            for (i, tx) in block.tx_list.iter().enumerate() {
                Self::index_tx(&mut self.anchors, &mut self.consents, tx, TxLocation { height, index: i });
            }
            self.blocks.push(block.clone());
            produced.push(block);
        }
        produced
    }

    /// Commits everything queued.
    pub fn flush(&mut self) -> Vec<Block> {
        self.run_ordering(u64::MAX)
    }

    fn commit_time(&self, height: u64, cut: u64, prev_commit: u64, tx_count: usize) -> u64 {
        let orgs = self.config.org_count as u64;
        let endorse = self.config.validation_delay_ms_per_tx * tx_count as f64 * orgs as f64;
        let slowest_hop = (0..orgs).map(|o| self.config.hop(height, o + 1)).fold(0.0, f64::max);
        cut.max(prev_commit) + (endorse + slowest_hop).ceil() as u64
    }

    pub fn validate_chain(&self) -> ChainValidity {
        validate_blocks(&self.blocks)
    }

    pub fn query_anchor(&self, customer_id: &str, explanation_hash: &Digest) -> Option<(OnChainAnchor, u64)> {
        self.anchors
            .iter()
            .filter(|(a, _)| a.customer_id == customer_id && a.explanation_hash == *explanation_hash)
            .min_by_key(|(_, loc)| (loc.height, loc.index))
            .map(|(a, loc)| (a.clone(), loc.height))
    }

    /// Exact membership test for a full `(ID, DTM, H_E)` triple.
    pub fn find_triple(&self, anchor: &OnChainAnchor) -> Option<u64> {
        self.anchors.get(anchor).map(|loc| loc.height)
    }

    pub fn anchors_for(&self, customer_id: &str) -> Vec<(OnChainAnchor, u64)> {
        let mut found: Vec<_> = self
            .anchors
            .iter()
            .filter(|(a, _)| a.customer_id == customer_id)
            .map(|(a, loc)| (a.clone(), loc.height))
            .collect();
        found.sort_by_key(|(a, h)| (*h, a.dtm));
        found
    }

    pub fn query_consent_hash(&self, expert_id: &str, org_id: &OrgId) -> Option<Digest> {
        self.consents.get(&(expert_id.to_string(), org_id.clone())).map(|(d, _, _)| *d)
    }

    pub fn count_kind(&self, kind: AnchorKind) -> usize {
        self.committed_txs().filter(|(_, tx)| tx.kind == kind).count()
    }

    pub fn perf_report(&self) -> Result<PerfReport, LedgerError> {
        let mut latencies = Vec::new();
        let mut first_submit = u64::MAX;
        let mut last_commit = 0;
        for (block, tx) in self.committed_txs() {
            latencies.push(block.commit_time.saturating_sub(tx.submit_time));
            first_submit = first_submit.min(tx.submit_time);
            last_commit = last_commit.max(block.commit_time);
        }
        if latencies.is_empty() {
            return Err(LedgerError::EmptyLedger);
        }
        let n = latencies.len();
        let mean = latencies.iter().map(|&l| l as f64).sum::<f64>() / n as f64;
        let mut sorted = latencies.clone();
        sorted.sort_unstable();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        let p95_rank = ((0.95 * n as f64).ceil() as usize).max(1);
        let span_ms = last_commit.saturating_sub(first_submit).max(1);
        Ok(PerfReport {
            per_tx_latency_ms: latencies,
            mean_latency_ms: mean,
            median_latency_ms: median,
            p95_latency_ms: sorted[p95_rank - 1] as f64,
            throughput_tps: n as f64 / (span_ms as f64 / 1000.0),
            node_count: self.config.org_count,
            tx_count: n,
        })
    }

    /// Applies `edit` to a committed block without resealing it. Exists so audits
    /// and tests can model an attacker with write access to a node's storage.
    pub fn tamper_block(&mut self, height: u64, edit: impl FnOnce(&mut Block)) {
        if let Some(b) = self.blocks.get_mut(height as usize) {
            edit(b);
        }
        self.reindex();
    }

    /// Rebuilds a self-consistent chain without the transactions matching `drop`.
    /// Models a rewritten history on a forked node.
    pub fn fork_excluding(&self, drop: impl Fn(&AnchorTx) -> bool) -> Ledger {
        let mut blocks = vec![Block::genesis()];
        for b in &self.blocks[1..] {
            let prev = blocks.last().unwrap();
            let txs: Vec<_> = b.tx_list.iter().filter(|tx| !drop(tx)).cloned().collect();
            blocks.push(Block::seal(prev.height + 1, prev.hash, txs, b.commit_time));
        }
        Ledger::from_blocks(self.config.clone(), blocks)
    }

    /// Encodes every block as a length-prefixed canonical record.
    pub fn to_records(&self) -> Vec<Vec<u8>> {
        self.blocks
            .iter()
            .map(|b| canonical_serialize(b).expect("blocks hold no floats").into_vec())
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LedgerError> {
        let mut file = std::fs::File::create(path).map_err(|e| LedgerError::Io(e.to_string()))?;
        for record in self.to_records() {
            write_record(&mut file, &record)?;
        }
        Ok(())
    }

    /// Appends blocks above `from_height` to an existing ledger file.
    pub fn append_to(&self, path: impl AsRef<Path>, from_height: u64) -> Result<(), LedgerError> {
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LedgerError::Io(e.to_string()))?;
        for b in self.blocks.iter().filter(|b| b.height > from_height) {
            write_record(&mut file, canonical_serialize(b).expect("no floats").as_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, config: NetworkConfig) -> Result<Ledger, LedgerError> {
        config.validate()?;
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| LedgerError::Io(e.to_string()))?;
        let records = split_records(&bytes)?;
        let blocks = decode_records(&records)?;
        let validity = validate_blocks(&blocks);
        if let Some(height) = validity.first_bad_height {
            return Err(LedgerError::Corrupt { height });
        }
        Ok(Ledger::from_blocks(config, blocks))
    }
}

fn write_record(out: &mut impl Write, record: &[u8]) -> Result<(), LedgerError> {
    let len = u32::try_from(record.len()).map_err(|_| LedgerError::Io("record too large".into()))?;
    out.write_all(&len.to_be_bytes()).map_err(|e| LedgerError::Io(e.to_string()))?;
    out.write_all(record).map_err(|e| LedgerError::Io(e.to_string()))
}

pub fn split_records(bytes: &[u8]) -> Result<Vec<Vec<u8>>, LedgerError> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < bytes.len() {
        let height = out.len() as u64;
        let len_bytes = bytes.get(pos..pos + 4).ok_or(LedgerError::Corrupt { height })?;
        let len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        pos += 4;
        let record = bytes.get(pos..pos + len).ok_or(LedgerError::Corrupt { height })?;
        out.push(record.to_vec());
        pos += len;
    }
    Ok(out)
}

fn decode_records(records: &[Vec<u8>]) -> Result<Vec<Block>, LedgerError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| canonical_deserialize(r).map_err(|_| LedgerError::Corrupt { height: i as u64 }))
        .collect()
}

/// Validates a chain given as raw canonical block records. A record that does
/// not decode to a canonical block counts as invalid at its height.
pub fn validate_records(records: &[Vec<u8>]) -> ChainValidity {
    let mut blocks = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        match canonical_deserialize::<Block>(r) {
            Ok(b) => blocks.push(b),
            Err(_) => {
                let earlier = validate_blocks(&blocks);
                return if earlier.valid { ChainValidity::bad(i as u64) } else { earlier };
            }
        }
    }
    validate_blocks(&blocks)
}

pub fn validate_blocks(blocks: &[Block]) -> ChainValidity {
    if blocks.is_empty() {
        return ChainValidity::bad(0);
    }
    let mut prev: Option<&Block> = None;
    for (i, b) in blocks.iter().enumerate() {
        let h = i as u64;
        let expected_prev = prev.map(|p| p.hash).unwrap_or(Digest::ZERO);
        let time_ok = prev.map_or(true, |p| b.commit_time >= p.commit_time);
        let txs_ok = b.tx_list.iter().all(|tx| tx.check().is_ok());
        if b.height != h
            || b.prev_hash != expected_prev
            || !time_ok
            || !txs_ok
            || b.tx_root != Block::compute_tx_root(&b.tx_list)
            || b.hash != Block::compute_hash(b.height, &b.prev_hash, &b.tx_root, b.commit_time)
        {
            return ChainValidity::bad(h);
        }
        prev = Some(b);
    }
    ChainValidity::ok()
}

/// On-chain storage cost in USD with 1 KB = 1000 bytes.
pub fn onchain_cost_estimate(bytes: i64, usd_per_kb: f64) -> Result<f64, LedgerError> {
    if bytes < 0 || usd_per_kb.is_nan() || usd_per_kb < 0.0 {
        return Err(LedgerError::NegativeInput);
    }
    Ok(bytes as f64 * usd_per_kb / 1000.0)
}

/// Submits `txs` explanation anchors round-robin across the organizations,
/// one every `gap_ms`, commits them all and reports latency and throughput.
/// The workload depends only on `(txs, gap_ms, seed)`, so reports for
/// different org counts are directly comparable.
pub fn bench_workload(preset: Preset, orgs: u32, txs: usize, gap_ms: u64, seed: u64) -> Result<PerfReport, LedgerError> {
    let config = NetworkConfig::preset(preset, orgs, seed);
    let ids = config.org_ids();
    let mut ledger = Ledger::new(config)?;
    for i in 0..txs {
        let customer_id = format!("bench-{i:06}");
        let submit = 1 + i as u64 * gap_ms;
        let explanation_hash = crate::crypto::sha256(format!("{seed}/{customer_id}").as_bytes());
        let anchor = OnChainAnchor { customer_id, dtm: submit, explanation_hash };
        ledger.submit_tx(AnchorTx::new(AnchorPayload::Explanation(anchor), ids[i % ids.len()].clone(), submit))?;
    }
    ledger.flush();
    ledger.perf_report()
}

/// Renders a dollar amount without trailing zeros: `101.86`, `5.093`, `0`.
pub fn format_usd(amount: f64) -> String {
    let s = format!("{amount:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    format!("${s}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::sha256;

    fn anchor_tx(customer: &str, dtm: u64, org: &str, submit: u64) -> AnchorTx {
        AnchorTx::new(
            AnchorPayload::Explanation(OnChainAnchor {
                customer_id: customer.into(),
                dtm,
                explanation_hash: sha256(format!("{customer}/{dtm}").as_bytes()),
            }),
            OrgId::from(org),
            submit,
        )
    }

    fn consent_tx(expert: &str, org: &str, state: &str, dtm: u64) -> AnchorTx {
        AnchorTx::new(
            AnchorPayload::Consent(ConsentAnchorPayload {
                expert_id: expert.into(),
                org_id: OrgId::from(org),
                consent_hash: sha256(state.as_bytes()),
                dtm,
            }),
            OrgId::from(org),
            dtm,
        )
    }

    fn ledger(orgs: u32) -> Ledger {
        Ledger::new(NetworkConfig::preset(Preset::FabricLike, orgs, 11)).unwrap()
    }

    #[test]
    fn submit_commit_and_duplicates() {
        let mut l = ledger(4);
        let tx = anchor_tx("cust-1", 1000, "org1", 1000);
        assert!(l.submit_tx(tx.clone()).unwrap().accepted);
        assert_eq!(l.submit_tx(tx.clone()), Err(LedgerError::DuplicateTx(tx.tx_id)));
        let blocks = l.flush();
        assert_eq!(blocks.len(), 1);
        assert_eq!(l.submit_tx(tx.clone()), Err(LedgerError::DuplicateTx(tx.tx_id)));
        let AnchorPayload::Explanation(a) = &tx.payload else { unreachable!() };
        assert_eq!(l.query_anchor("cust-1", &a.explanation_hash).unwrap().0, *a);
    }

    #[test]
    fn malformed_tx_rejected() {
        let mut l = ledger(2);
        let mut tx = anchor_tx("c", 5, "org1", 5);
        tx.tx_id = sha256(b"wrong");
        assert!(matches!(l.submit_tx(tx), Err(LedgerError::MalformedTx(_))));
        let mut tx = anchor_tx("c", 5, "org1", 5);
        tx.kind = AnchorKind::ConsentAnchor;
        assert!(matches!(l.submit_tx(tx), Err(LedgerError::MalformedTx(_))));
    }

    #[test]
    fn empty_queue_makes_no_blocks() {
        let mut l = ledger(4);
        assert!(l.flush().is_empty());
        assert_eq!(l.perf_report(), Err(LedgerError::EmptyLedger));
    }

    #[test]
    fn uncommitted_anchor_is_not_found() {
        let mut l = ledger(4);
        let tx = anchor_tx("c9", 77, "org2", 77);
        let AnchorPayload::Explanation(a) = tx.payload.clone() else { unreachable!() };
        l.submit_tx(tx).unwrap();
        assert!(l.query_anchor("c9", &a.explanation_hash).is_none());
        l.run_ordering(77); // batch timeout has not elapsed yet
        assert!(l.query_anchor("c9", &a.explanation_hash).is_none());
        l.flush();
        assert!(l.query_anchor("c9", &a.explanation_hash).is_some());
        assert!(l.query_anchor("c9", &sha256(b"never")).is_none());
    }

    #[test]
    fn eight_hundred_txs_across_four_orgs() {
        let mut l = ledger(4);
        for i in 0..800u64 {
            let org = format!("org{}", i % 4 + 1);
            l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, &org, i * 10)).unwrap();
        }
        l.flush();
        let report = l.perf_report().unwrap();
        assert_eq!(report.tx_count, 800);
        assert_eq!(report.per_tx_latency_ms.len(), 800);
        assert!(report.throughput_tps > 0.0);
        assert!(l.validate_chain().valid);
        // every tx in exactly one block
        let ids: HashSet<_> = l.committed_txs().map(|(_, t)| t.tx_id).collect();
        assert_eq!(ids.len(), 800);
        // monotone heights and commit times
        for w in l.blocks().windows(2) {
            assert_eq!(w[1].height, w[0].height + 1);
            assert!(w[1].commit_time >= w[0].commit_time);
        }
    }

    #[test]
    fn same_seed_same_hashes() {
        let run = || {
            let mut l = ledger(4);
            for i in 0..50u64 {
                l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, "org1", i * 3)).unwrap();
            }
            l.flush();
            l.blocks().iter().map(|b| b.hash).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn throughput_arithmetic() {
        // 100 txs at t=0, 10 per block, 100 ms endorsement per tx, no network delay:
        // block b commits at 1000*(b+1), so the last lands at 10 s.
        let config = NetworkConfig {
            org_count: 1,
            hop_latency_mean_ms: 0.0,
            hop_latency_jitter_ms: 0.0,
            block_interval_ms: 1000,
            max_txs_per_block: 10,
            validation_delay_ms_per_tx: 100.0,
            seed: 1,
        };
        let mut l = Ledger::new(config).unwrap();
        for i in 0..100u64 {
            l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, "org1", 0)).unwrap();
        }
        l.flush();
        let r = l.perf_report().unwrap();
        assert_eq!(r.throughput_tps, 10.0);
        assert_eq!(r.mean_latency_ms, 5500.0);
        assert_eq!(l.height(), 10);
    }

    #[test]
    fn org_count_trend() {
        let run = |orgs: u32| {
            let mut l = ledger(orgs);
            for i in 0..400u64 {
                l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, "org1", i * 5)).unwrap();
            }
            l.flush();
            l.perf_report().unwrap()
        };
        let two = run(2);
        let eight = run(8);
        assert!(eight.mean_latency_ms >= two.mean_latency_ms);
        assert!(eight.throughput_tps <= two.throughput_tps);
    }

    #[test]
    fn consent_hash_chronology_and_isolation() {
        let mut l = ledger(4);
        l.submit_tx(consent_tx("h1", "org1", "first", 10)).unwrap();
        l.flush();
        l.submit_tx(consent_tx("h1", "org1", "second", 2000)).unwrap();
        l.flush();
        assert_eq!(l.query_consent_hash("h1", &OrgId::from("org1")), Some(sha256(b"second")));
        assert_eq!(l.query_consent_hash("h1", &OrgId::from("org2")), None);
        assert_eq!(l.query_consent_hash("h2", &OrgId::from("org1")), None);
    }

    #[test]
    fn tampering_breaks_validation() {
        let mut l = ledger(4);
        for i in 0..30u64 {
            l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, "org1", i * 100)).unwrap();
        }
        l.flush();
        assert!(l.validate_chain().valid);
        let target = 2;
        let mut t = l.clone();
        t.tamper_block(target, |b| {
            if let AnchorPayload::Explanation(a) = &mut b.tx_list[0].payload {
                a.dtm += 1;
            }
        });
        assert_eq!(t.validate_chain(), ChainValidity::bad(target));

        let mut t = l.clone();
        t.tamper_block(target, |b| b.prev_hash = sha256(b"x"));
        assert_eq!(t.validate_chain(), ChainValidity::bad(target));
    }

    #[test]
    fn fork_without_tx_is_valid_but_missing_it() {
        let mut l = ledger(2);
        let tx = anchor_tx("gone", 9, "org1", 9);
        let AnchorPayload::Explanation(a) = tx.payload.clone() else { unreachable!() };
        l.submit_tx(tx.clone()).unwrap();
        l.submit_tx(anchor_tx("kept", 10, "org1", 10)).unwrap();
        l.flush();
        let fork = l.fork_excluding(|t| t.tx_id == tx.tx_id);
        assert!(fork.validate_chain().valid);
        assert!(fork.find_triple(&a).is_none());
        assert!(l.find_triple(&a).is_some());
    }

    #[test]
    fn file_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let mut l = ledger(4);
        for i in 0..20u64 {
            l.submit_tx(anchor_tx(&format!("c{i}"), 1 + i, "org3", i * 700)).unwrap();
        }
        l.flush();
        l.save(&path).unwrap();
        let back = Ledger::load(&path, l.config().clone()).unwrap();
        assert_eq!(back.blocks(), l.blocks());

        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 10] ^= 0x01;
        std::fs::write(&path, &bytes).unwrap();
        assert!(Ledger::load(&path, l.config().clone()).is_err());
    }

    #[test]
    fn append_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.bin");
        let mut l = ledger(2);
        l.save(&path).unwrap();
        l.submit_tx(anchor_tx("a", 1, "org1", 1)).unwrap();
        l.flush();
        l.append_to(&path, 0).unwrap();
        let back = Ledger::load(&path, l.config().clone()).unwrap();
        assert_eq!(back.height(), 1);
    }

    #[test]
    fn cost_arithmetic() {
        assert_eq!(format_usd(onchain_cost_estimate(2000, 50.93).unwrap()), "$101.86");
        assert_eq!(format_usd(onchain_cost_estimate(100, 50.93).unwrap()), "$5.093");
        assert_eq!(onchain_cost_estimate(0, 50.93).unwrap(), 0.0);
        assert_eq!(format_usd(0.0), "$0");
        assert_eq!(onchain_cost_estimate(-1, 50.93), Err(LedgerError::NegativeInput));
        assert_eq!(onchain_cost_estimate(1, -0.5), Err(LedgerError::NegativeInput));
    }

    #[test]
    fn org_sweep_trends() {
        let reports: Vec<PerfReport> =
            [2, 4, 6, 8].iter().map(|&n| bench_workload(Preset::FabricLike, n, 800, 5, 11).unwrap()).collect();
        for w in reports.windows(2) {
            assert!(w[1].mean_latency_ms >= w[0].mean_latency_ms);
            assert!(w[1].throughput_tps <= w[0].throughput_tps);
        }
        assert!(reports.iter().all(|r| r.tx_count == 800));
        assert_eq!(bench_workload(Preset::FabricLike, 4, 800, 5, 11).unwrap(), reports[1]);
    }
}
