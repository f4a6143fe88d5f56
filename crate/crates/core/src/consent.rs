//! Expert consent state, its transition table, and per-organization replicas.
//!
//! Every organization keeps a replica of every expert's consent state. An
//! event is applied replica by replica; each application yields one consent
//! anchor for the ledger. Replica hashes leave out the holding organization
//! and the update time, so replicas in agreement hash equal.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crypto::{canonical_digest, Digest, OrgId};
use crate::ledger::ConsentAnchorPayload;

/// Consent for data acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Caq {
    Approved,
    Invalid,
    Rejected,
    Awaiting,
}

/// Consent to withdraw data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cw {
    Requested,
    Invalid,
    NotRequested,
}

/// Consent to access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ca {
    AgreedAndValid,
    Invalid,
    NotAgreed,
    Awaiting,
}

impl Caq {
    pub const ALL: [Caq; 4] = [Caq::Approved, Caq::Invalid, Caq::Rejected, Caq::Awaiting];
}
impl Cw {
    pub const ALL: [Cw; 3] = [Cw::Requested, Cw::Invalid, Cw::NotRequested];
}
impl Ca {
    pub const ALL: [Ca; 4] = [Ca::AgreedAndValid, Ca::Invalid, Ca::NotAgreed, Ca::Awaiting];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentState {
    pub expert_id: String,
    /// Organization holding this replica.
    pub org_id: OrgId,
    pub caq: Caq,
    pub cw: Cw,
    pub ca: Ca,
    pub updated_dtm: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConsentEventKind {
    GrantAcquisition,
    RejectAcquisition,
    RequestWithdrawal,
    ProcessWithdrawal,
    GrantAccess,
    DenyAccess,
    Invalidate,
}

impl ConsentEventKind {
    pub const ALL: [ConsentEventKind; 7] = [
        ConsentEventKind::GrantAcquisition,
        ConsentEventKind::RejectAcquisition,
        ConsentEventKind::RequestWithdrawal,
        ConsentEventKind::ProcessWithdrawal,
        ConsentEventKind::GrantAccess,
        ConsentEventKind::DenyAccess,
        ConsentEventKind::Invalidate,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentEvent {
    pub kind: ConsentEventKind,
    pub actor: String,
    pub dtm: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum ConsentError {
    #[error("expert {0} already registered")]
    AlreadyRegistered(String),
    #[error("unknown expert {0}")]
    UnknownExpert(String),
    #[error("unknown organization {0}")]
    UnknownOrg(OrgId),
    #[error("{event:?} is not allowed from ({caq:?}, {cw:?}, {ca:?})")]
    IllegalTransition { event: ConsentEventKind, caq: Caq, cw: Cw, ca: Ca },
}

pub fn init_state(expert_id: &str, org_id: &OrgId, dtm: u64) -> ConsentState {
    ConsentState {
        expert_id: expert_id.to_string(),
        org_id: org_id.clone(),
        caq: Caq::Awaiting,
        cw: Cw::NotRequested,
        ca: Ca::Awaiting,
        updated_dtm: dtm,
    }
}

/// Applies one event to one replica.
pub fn apply_event(state: &ConsentState, event: &ConsentEvent) -> Result<ConsentState, ConsentError> {
    use ConsentEventKind::*;
    let illegal = || ConsentError::IllegalTransition { event: event.kind, caq: state.caq, cw: state.cw, ca: state.ca };
    let mut next = state.clone();
    match event.kind {
        GrantAcquisition if state.caq == Caq::Awaiting => next.caq = Caq::Approved,
        RejectAcquisition if state.caq == Caq::Awaiting => next.caq = Caq::Rejected,
        GrantAccess if state.ca == Ca::Awaiting => next.ca = Ca::AgreedAndValid,
        DenyAccess if state.ca == Ca::Awaiting => next.ca = Ca::NotAgreed,
        RequestWithdrawal if state.cw == Cw::NotRequested => next.cw = Cw::Requested,
        ProcessWithdrawal if state.cw == Cw::Requested => {
            next.caq = Caq::Invalid;
            next.ca = Ca::Invalid;
        }
        Invalidate => {
            next.caq = Caq::Invalid;
            next.cw = Cw::Invalid;
            next.ca = Ca::Invalid;
        }
        _ => return Err(illegal()),
    }
    next.updated_dtm = event.dtm;
    Ok(next)
}

#[derive(Serialize)]
struct HashedConsent<'a> {
    expert_id: &'a str,
    caq: Caq,
    cw: Cw,
    ca: Ca,
}

/// Content hash of a replica; excludes the holding org and the timestamp.
pub fn consent_hash(state: &ConsentState) -> Digest {
    canonical_digest(&HashedConsent { expert_id: &state.expert_id, caq: state.caq, cw: state.cw, ca: state.ca })
        .expect("enum and string fields only")
}

pub fn is_processed_withdrawal(state: &ConsentState) -> bool {
    state.cw == Cw::Requested && state.caq == Caq::Invalid && state.ca == Ca::Invalid
}

#[derive(Debug, Clone)]
pub struct ConsentRegistry {
    orgs: Vec<OrgId>,
    home: BTreeMap<String, OrgId>,
    replicas: BTreeMap<OrgId, BTreeMap<String, ConsentState>>,
}

impl ConsentRegistry {
    pub fn new(orgs: Vec<OrgId>) -> Self {
        let replicas = orgs.iter().map(|o| (o.clone(), BTreeMap::new())).collect();
        ConsentRegistry { orgs, home: BTreeMap::new(), replicas }
    }

    pub fn orgs(&self) -> &[OrgId] {
        &self.orgs
    }

    pub fn experts(&self) -> impl Iterator<Item = (&String, &OrgId)> {
        self.home.iter()
    }

    pub fn home_org(&self, expert_id: &str) -> Option<&OrgId> {
        self.home.get(expert_id)
    }

    /// Registers an expert contributing through `org_id` and seeds the initial
    /// state into every organization's replica. Returns the home replica.
    pub fn init_consent(&mut self, expert_id: &str, org_id: &OrgId, dtm: u64) -> Result<ConsentState, ConsentError> {
        if !self.replicas.contains_key(org_id) {
            return Err(ConsentError::UnknownOrg(org_id.clone()));
        }
        if self.home.contains_key(expert_id) {
            return Err(ConsentError::AlreadyRegistered(expert_id.to_string()));
        }
        self.home.insert(expert_id.to_string(), org_id.clone());
        for (org, replica) in &mut self.replicas {
            replica.insert(expert_id.to_string(), init_state(expert_id, org, dtm));
        }
        Ok(init_state(expert_id, org_id, dtm))
    }

    pub fn state_at(&self, org: &OrgId, expert_id: &str) -> Option<&ConsentState> {
        self.replicas.get(org)?.get(expert_id)
    }

    /// Applies `event` to a single org's replica and returns the anchor to commit.
    pub fn apply_at(
        &mut self,
        org: &OrgId,
        expert_id: &str,
        event: &ConsentEvent,
    ) -> Result<(ConsentState, ConsentAnchorPayload), ConsentError> {
        let replica = self.replicas.get_mut(org).ok_or_else(|| ConsentError::UnknownOrg(org.clone()))?;
        let state = replica.get_mut(expert_id).ok_or_else(|| ConsentError::UnknownExpert(expert_id.to_string()))?;
        let next = apply_event(state, event)?;
        *state = next.clone();
        let anchor = ConsentAnchorPayload {
            expert_id: expert_id.to_string(),
            org_id: org.clone(),
            consent_hash: consent_hash(&next),
            dtm: event.dtm,
        };
        Ok((next, anchor))
    }

    /// Applies `event` at every replica, or at none if any replica refuses it.
    pub fn apply_everywhere(
        &mut self,
        expert_id: &str,
        event: &ConsentEvent,
    ) -> Result<Vec<(ConsentState, ConsentAnchorPayload)>, ConsentError> {
        if !self.home.contains_key(expert_id) {
            return Err(ConsentError::UnknownExpert(expert_id.to_string()));
        }
        for org in &self.orgs {
            let state = self.state_at(org, expert_id).ok_or_else(|| ConsentError::UnknownExpert(expert_id.to_string()))?;
            apply_event(state, event)?;
        }
        let orgs = self.orgs.clone();
        orgs.iter().map(|org| self.apply_at(org, expert_id, event)).collect()
    }

    /// Every expert's state as held by `org_id`.
    pub fn snapshot_all(&self, org_id: &OrgId) -> Vec<ConsentState> {
        self.replicas.get(org_id).map(|r| r.values().cloned().collect()).unwrap_or_default()
    }

    pub fn replica_hashes(&self, expert_id: &str) -> Vec<(OrgId, Digest)> {
        self.orgs
            .iter()
            .filter_map(|o| self.state_at(o, expert_id).map(|s| (o.clone(), consent_hash(s))))
            .collect()
    }

    /// True when every replica records a processed withdrawal for `subject_id`.
    pub fn withdrawal_processed(&self, subject_id: &str) -> bool {
        let states: Vec<_> = self.orgs.iter().filter_map(|o| self.state_at(o, subject_id)).collect();
        !states.is_empty() && states.len() == self.orgs.len() && states.iter().all(|s| is_processed_withdrawal(s))
    }

    /// Direct edit of one replica, bypassing the transition table.
    pub fn tamper_replica(&mut self, org: &OrgId, expert_id: &str, edit: impl FnOnce(&mut ConsentState)) {
        if let Some(state) = self.replicas.get_mut(org).and_then(|r| r.get_mut(expert_id)) {
            edit(state);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{HashSet, VecDeque};

    fn ev(kind: ConsentEventKind) -> ConsentEvent {
        ConsentEvent { kind, actor: "h1".into(), dtm: 5 }
    }

    fn orgs(n: usize) -> Vec<OrgId> {
        (1..=n).map(|i| OrgId(format!("org{i}"))).collect()
    }

    #[test]
    fn initial_state() {
        let s = init_state("h1", &OrgId::from("org1"), 1);
        assert_eq!((s.caq, s.cw, s.ca), (Caq::Awaiting, Cw::NotRequested, Ca::Awaiting));
        let mut reg = ConsentRegistry::new(orgs(4));
        reg.init_consent("h1", &OrgId::from("org1"), 1).unwrap();
        assert_eq!(
            reg.init_consent("h1", &OrgId::from("org2"), 1),
            Err(ConsentError::AlreadyRegistered("h1".into()))
        );
    }

    #[test]
    fn table_rows() {
        let s = init_state("h1", &OrgId::from("org1"), 1);
        let s = apply_event(&s, &ev(ConsentEventKind::GrantAcquisition)).unwrap();
        assert_eq!(s.caq, Caq::Approved);
        assert_eq!(s.updated_dtm, 5);
        let s = apply_event(&s, &ev(ConsentEventKind::GrantAccess)).unwrap();
        let s = apply_event(&s, &ev(ConsentEventKind::RequestWithdrawal)).unwrap();
        assert_eq!((s.caq, s.cw, s.ca), (Caq::Approved, Cw::Requested, Ca::AgreedAndValid));
        let s = apply_event(&s, &ev(ConsentEventKind::ProcessWithdrawal)).unwrap();
        assert_eq!((s.caq, s.cw, s.ca), (Caq::Invalid, Cw::Requested, Ca::Invalid));
        assert!(is_processed_withdrawal(&s));

        let rejected = apply_event(&init_state("h", &OrgId::from("o"), 0), &ev(ConsentEventKind::RejectAcquisition)).unwrap();
        assert!(matches!(
            apply_event(&rejected, &ev(ConsentEventKind::GrantAcquisition)),
            Err(ConsentError::IllegalTransition { .. })
        ));
    }

    #[test]
    fn hash_ignores_holder_and_time() {
        let a = init_state("h1", &OrgId::from("org1"), 1);
        let mut b = init_state("h1", &OrgId::from("org2"), 999);
        assert_eq!(consent_hash(&a), consent_hash(&b));
        b.ca = Ca::NotAgreed;
        assert_ne!(consent_hash(&a), consent_hash(&b));
        // frozen: hash of the initial state is stable across builds and processes
        assert_eq!(
            crate::crypto::canonical_serialize(&HashedConsent { expert_id: "h1", caq: a.caq, cw: a.cw, ca: a.ca })
                .unwrap()
                .as_bytes(),
            br#"{"ca":"awaiting","caq":"awaiting","cw":"not_requested","expert_id":"h1"}"#
        );
    }

    /// Exhaustive walk of the reachable state space.
    #[test]
    fn reachable_states_stay_in_enumeration() {
        let start = init_state("h", &OrgId::from("o"), 0);
        let mut seen = HashSet::new();
        let mut frontier = VecDeque::from([(start.caq, start.cw, start.ca)]);
        while let Some((caq, cw, ca)) = frontier.pop_front() {
            if !seen.insert((caq, cw, ca)) {
                continue;
            }
            let s = ConsentState { caq, cw, ca, ..start.clone() };
            for kind in ConsentEventKind::ALL {
                if let Ok(n) = apply_event(&s, &ev(kind)) {
                    assert!(Caq::ALL.contains(&n.caq) && Cw::ALL.contains(&n.cw) && Ca::ALL.contains(&n.ca));
                    frontier.push_back((n.caq, n.cw, n.ca));
                }
            }
        }
        // invalid is absorbing for caq and ca once reached by withdrawal or invalidation
        for &(caq, _, ca) in &seen {
            if caq == Caq::Invalid {
                assert_eq!(ca, Ca::Invalid);
            }
        }
        assert!(seen.len() <= 4 * 3 * 4);
        assert!(seen.contains(&(Caq::Invalid, Cw::Invalid, Ca::Invalid)));
    }

    #[test]
    fn replication_at_table_four_scale() {
        let mut reg = ConsentRegistry::new(orgs(4));
        for o in 1..=4 {
            for e in 1..=3 {
                reg.init_consent(&format!("h{o}{e}"), &OrgId(format!("org{o}")), 1).unwrap();
            }
        }
        for org in orgs(4) {
            assert_eq!(reg.snapshot_all(&org).len(), 12);
        }
        let anchors = reg.apply_everywhere("h11", &ev(ConsentEventKind::GrantAcquisition)).unwrap();
        assert_eq!(anchors.len(), 4);
        let snaps: Vec<Vec<Digest>> =
            orgs(4).iter().map(|o| reg.snapshot_all(o).iter().map(consent_hash).collect()).collect();
        assert!(snaps.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn apply_everywhere_is_all_or_nothing() {
        let mut reg = ConsentRegistry::new(orgs(3));
        reg.init_consent("h", &OrgId::from("org1"), 0).unwrap();
        reg.tamper_replica(&OrgId::from("org3"), "h", |s| s.caq = Caq::Rejected);
        assert!(reg.apply_everywhere("h", &ev(ConsentEventKind::GrantAcquisition)).is_err());
        assert_eq!(reg.state_at(&OrgId::from("org1"), "h").unwrap().caq, Caq::Awaiting);
    }
}
