//! The decision service: application intake, explanation and anchoring,
//! the expert review queue, consent management, audits and retraining.
//!
//! [`Gateway`] is synchronous and shared behind an `Arc`; [`http::router`]
//! exposes it over HTTP.

pub mod http;
pub mod svg;

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::audit::{audit_consent, batch_audit_experiment, AuditError, AuditReport, Auditor, ItemVerdict, TamperVerdict};
use crate::consent::{Caq, ConsentError, ConsentEvent, ConsentEventKind, ConsentRegistry, ConsentState};
use crate::crypto::{canonical_serialize, sha256, Digest, OrgId};
use crate::explain::{build_artifact, lime_map, lrp_map, shap_attr, ExplainError, LrpParams, LrpVariant, ShapMode};
use crate::hitl::{decision_entropy, route, HitlError, Route, DEFAULT_THRESHOLD};
use crate::ledger::{
    AnchorKind, AnchorPayload, AnchorTx, CredentialAnchorPayload, Ledger, LedgerError, ModelAnchorPayload, NetworkConfig,
    OnChainAnchor, PerfReport, Preset,
};
use crate::model::train::{cross_validate, train, TrainOptions};
use crate::model::{Decision, DecisionDistribution, LoanApplication, ModelConfig, ModelError, Sample, Schema};
use crate::offchain::{Namespace, OffChainStore, StoreError, StoreKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Expert,
    Developer,
    AuditRegulator,
    Customer,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Expert, Role::Developer, Role::AuditRegulator, Role::Customer];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Expert => "expert",
            Role::Developer => "developer",
            Role::AuditRegulator => "audit_regulator",
            Role::Customer => "customer",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorPrincipal {
    pub actor_id: String,
    pub role: Role,
    pub org_id: OrgId,
    pub credential_hash: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    AutoDecided,
    AwaitingReview,
    Reviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub expert_id: String,
    pub decision: Decision,
    pub dtm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationCase {
    pub case_id: String,
    pub application: LoanApplication,
    pub org_id: OrgId,
    pub dtm: u64,
    pub decision: DecisionDistribution,
    pub entropy: f64,
    pub route: Route,
    pub artifact_hash: Digest,
    pub model_iteration: u64,
    pub status: CaseStatus,
    pub review: Option<ReviewRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub case_id: String,
    pub customer_id: String,
    pub decision: DecisionDistribution,
    pub entropy: f64,
    pub artifact_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainReport {
    pub iteration: u64,
    pub annotated: usize,
    pub labeled_size: usize,
    /// Mean stratified cross-validated AUC on the new labeled set, when both
    /// classes have enough samples.
    pub auc: Option<f64>,
    pub config_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerMetrics {
    pub height: u64,
    pub valid: bool,
    pub explanation_anchors: usize,
    pub consent_anchors: usize,
    pub model_anchors: usize,
    pub credential_anchors: usize,
    pub perf: Option<PerfReport>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GatewayError {
    #[error("missing or unknown credential")]
    Unauthorized,
    #[error("role {0:?} may not perform this action")]
    WrongRole(Role),
    #[error("{0} not found")]
    NotFound(String),
    #[error("case {0} is not awaiting review")]
    CaseNotPending(String),
    #[error("annotation buffer is empty")]
    EmptyBuffer,
    #[error("actor {0} already registered")]
    AlreadyRegistered(String),
    #[error("expert {0} has not approved data acquisition")]
    ConsentRequired(String),
    #[error("no model snapshot is loaded")]
    ModelUnavailable,
    #[error(transparent)]
    Consent(#[from] ConsentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("{0}")]
    Internal(String),
}

impl GatewayError {
    pub fn code(&self) -> &'static str {
        match self {
            GatewayError::Unauthorized => "unauthorized",
            GatewayError::WrongRole(_) => "wrong_role",
            GatewayError::NotFound(_) => "not_found",
            GatewayError::CaseNotPending(_) => "case_not_pending",
            GatewayError::EmptyBuffer => "empty_buffer",
            GatewayError::AlreadyRegistered(_) => "already_registered",
            GatewayError::ConsentRequired(_) => "consent_required",
            GatewayError::ModelUnavailable => "model_unavailable",
            GatewayError::Consent(ConsentError::IllegalTransition { .. }) => "illegal_transition",
            GatewayError::Consent(ConsentError::UnknownExpert(_)) => "not_found",
            GatewayError::Consent(_) => "consent_error",
            GatewayError::Model(ModelError::UnknownCategory { .. }) => "unknown_category",
            GatewayError::Model(ModelError::SchemaMismatch { .. }) => "schema_mismatch",
            GatewayError::Model(_) => "model_error",
            GatewayError::Audit(AuditError::InsufficientFiles { .. }) => "insufficient_files",
            GatewayError::Audit(AuditError::FewerThanTwoOrgs) => "fewer_than_two_orgs",
            GatewayError::Audit(_) => "audit_error",
            GatewayError::Internal(_) => "internal",
        }
    }
}

macro_rules! internal_from {
    ($($t:ty),*) => {$(
        impl From<$t> for GatewayError {
            fn from(e: $t) -> Self {
                GatewayError::Internal(e.to_string())
            }
        }
    )*};
}
internal_from!(StoreError, LedgerError, crate::crypto::CryptoError, crate::crypto::CanonicalError);

impl From<ExplainError> for GatewayError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Model(m) => GatewayError::Model(m),
            other => GatewayError::Internal(other.to_string()),
        }
    }
}

impl From<HitlError> for GatewayError {
    fn from(e: HitlError) -> Self {
        match e {
            HitlError::Model(m) => GatewayError::Model(m),
            other => GatewayError::Internal(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewayConfig {
    pub network: NetworkConfig,
    pub threshold: f64,
    pub shap_permutations: usize,
    pub lime_perturbations: usize,
    pub train_epochs: usize,
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            network: NetworkConfig::preset(Preset::FabricLike, 4, 1),
            threshold: DEFAULT_THRESHOLD,
            shap_permutations: 24,
            lime_perturbations: 300,
            train_epochs: 10,
            cv_folds: 5,
            seed: 7,
        }
    }
}

/// An immutable model version served to inference.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    pub model: ModelConfig,
    /// Column means of the training features, the SHAP/LIME baseline.
    pub background: Vec<f64>,
    pub iteration: u64,
    pub config_hash: Digest,
}

struct Training {
    labeled: Vec<Sample>,
    /// Expert-annotated samples waiting for the next retrain, with their annotator.
    buffer: Vec<(String, Sample)>,
}

/// Explanation-kind triples keyed by expert id record expert contributions.
struct Contribution {
    expert_id: String,
    dtm: u64,
}

pub const CLOCK_START: u64 = 1_700_000_000_000;

pub struct Gateway {
    cfg: GatewayConfig,
    schema: Schema,
    store: OffChainStore,
    ledger: Mutex<Ledger>,
    consents: Mutex<ConsentRegistry>,
    model: RwLock<Option<Arc<ModelSnapshot>>>,
    training: Mutex<Training>,
    cases: RwLock<BTreeMap<String, ApplicationCase>>,
    contributions: Mutex<Vec<Contribution>>,
    actors: RwLock<HashMap<Digest, ActorPrincipal>>,
    clock: AtomicU64,
    case_seq: AtomicU64,
}

fn background_of(samples: &[Sample], len: usize) -> Vec<f64> {
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(&s.features) {
            *m += x;
        }
    }
    let n = samples.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

impl Gateway {
    /// Builds the service around `model`, registering every organization's
    /// key in the store's vault and anchoring the model as iteration 0.
    pub fn new(
        cfg: GatewayConfig,
        schema: Schema,
        store: OffChainStore,
        model: ModelConfig,
        labeled: Vec<Sample>,
    ) -> Result<Gateway, GatewayError> {
        let orgs = cfg.network.org_ids();
        for org in &orgs {
            store.vault().register_org(org)?;
        }
        let ledger = Ledger::new(cfg.network.clone())?;
        let gw = Gateway {
            schema,
            store,
            ledger: Mutex::new(ledger),
            consents: Mutex::new(ConsentRegistry::new(orgs)),
            model: RwLock::new(None),
            training: Mutex::new(Training { labeled, buffer: Vec::new() }),
            cases: RwLock::new(BTreeMap::new()),
            contributions: Mutex::new(Vec::new()),
            actors: RwLock::new(HashMap::new()),
            clock: AtomicU64::new(CLOCK_START),
            case_seq: AtomicU64::new(0),
            cfg,
        };
        let background = background_of(&gw.training.lock().labeled, model.input_len());
        gw.install_model(model, background, 0)?;
        Ok(gw)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn store(&self) -> &OffChainStore {
        &self.store
    }

    /// Runs `f` with the ledger locked.
    pub fn with_ledger<T>(&self, f: impl FnOnce(&mut Ledger) -> T) -> T {
        f(&mut self.ledger.lock())
    }

    pub fn with_consents<T>(&self, f: impl FnOnce(&mut ConsentRegistry) -> T) -> T {
        f(&mut self.consents.lock())
    }

    pub fn snapshot(&self) -> Result<Arc<ModelSnapshot>, GatewayError> {
        self.model.read().clone().ok_or(GatewayError::ModelUnavailable)
    }

    fn tick(&self) -> u64 {
        self.clock.fetch_add(1, Ordering::SeqCst)
    }

    fn commit(&self, txs: Vec<AnchorTx>) -> Result<(), GatewayError> {
        let mut ledger = self.ledger.lock();
        for tx in txs {
            ledger.submit_tx(tx)?;
        }
        ledger.flush();
        Ok(())
    }

    fn install_model(&self, model: ModelConfig, background: Vec<f64>, iteration: u64) -> Result<Digest, GatewayError> {
        let config_hash = model.config_hash()?;
        let dtm = self.tick();
        let anchor = ModelAnchorPayload { model_id: "loan-cnn".into(), iteration, config_hash, dtm };
        let org = self.cfg.network.org_ids()[0].clone();
        self.commit(vec![AnchorTx::new(AnchorPayload::ModelConfig(anchor), org, dtm)])?;
        *self.model.write() = Some(Arc::new(ModelSnapshot { model, background, iteration, config_hash }));
        Ok(config_hash)
    }

    /// Registers an actor whose bearer credential is `credential`. Only its
    /// digest is kept and anchored. Experts also get consent replicas.
    pub fn register_actor(&self, actor_id: &str, role: Role, org_id: &OrgId, credential: &str) -> Result<ActorPrincipal, GatewayError> {
        if !self.store.vault().is_registered(org_id) {
            return Err(GatewayError::NotFound(format!("organization {org_id}")));
        }
        let credential_hash = sha256(credential.as_bytes());
        {
            let actors = self.actors.read();
            if actors.contains_key(&credential_hash) || actors.values().any(|a| a.actor_id == actor_id) {
                return Err(GatewayError::AlreadyRegistered(actor_id.to_string()));
            }
        }
        let principal = ActorPrincipal { actor_id: actor_id.to_string(), role, org_id: org_id.clone(), credential_hash };
        let dtm = self.tick();
        let mut txs = vec![AnchorTx::new(
            AnchorPayload::Credential(CredentialAnchorPayload {
                actor_id: actor_id.to_string(),
                org_id: org_id.clone(),
                role: role.as_str().to_string(),
                credential_hash,
            }),
            org_id.clone(),
            dtm,
        )];
        if role == Role::Expert {
            let mut consents = self.consents.lock();
            consents.init_consent(actor_id, org_id, dtm)?;
            for (org, hash) in consents.replica_hashes(actor_id) {
                let payload = crate::ledger::ConsentAnchorPayload {
                    expert_id: actor_id.to_string(),
                    org_id: org.clone(),
                    consent_hash: hash,
                    dtm,
                };
                txs.push(AnchorTx::new(AnchorPayload::Consent(payload), org, dtm));
            }
        }
        self.commit(txs)?;
        self.actors.write().insert(credential_hash, principal.clone());
        Ok(principal)
    }

    pub fn authenticate(&self, credential: &str) -> Result<ActorPrincipal, GatewayError> {
        self.actors.read().get(&sha256(credential.as_bytes())).cloned().ok_or(GatewayError::Unauthorized)
    }

    fn require(actor: &ActorPrincipal, roles: &[Role]) -> Result<(), GatewayError> {
        if roles.contains(&actor.role) {
            Ok(())
        } else {
            Err(GatewayError::WrongRole(actor.role))
        }
    }

    /// Encode, predict, route, explain, store, anchor and enqueue.
    pub fn process_application(&self, actor: &ActorPrincipal, app: LoanApplication) -> Result<ApplicationCase, GatewayError> {
        match actor.role {
            Role::Developer => {}
            Role::Customer if actor.actor_id == app.customer_id => {}
            other => return Err(GatewayError::WrongRole(other)),
        }
        let x = self.schema.encode(&app)?;
        let snap = self.snapshot()?;
        let model = &snap.model;
        let decision = model.predict(&x)?;
        let phi = decision_entropy(&decision)?;
        let routing = route(phi, self.cfg.threshold);
        let target = decision.argmax();
        let groups = self.schema.groups();
        let seed = self.cfg.seed ^ self.case_seq.load(Ordering::SeqCst);
        let maps = vec![
            lrp_map(model, &x, target, LrpParams::new(LrpVariant::Gamma), &groups)?,
            shap_attr(
                model,
                &x,
                target,
                &snap.background,
                &groups,
                ShapMode::Sampled { permutations: self.cfg.shap_permutations, seed },
            )?,
            match lime_map(model, &x, target, &snap.background, &groups, self.cfg.lime_perturbations, None, seed) {
                Ok(m) => m,
                // a model flat around this input has no local surrogate; keep the other maps
                Err(ExplainError::DegeneratePerturbations) => {
                    let zeros = vec![0.0; groups.len()];
                    crate::explain::RelevanceMap::from_attributes(
                        crate::explain::Method::Lime {
                            perturbations: self.cfg.lime_perturbations,
                            kernel_width: crate::explain::lime::default_kernel_width(groups.len()),
                            seed,
                            r_squared: 0.0,
                        },
                        target,
                        &x,
                        zeros,
                        &groups,
                    )
                }
                Err(e) => return Err(e.into()),
            },
        ];

        let dtm = self.tick();
        let (_, bytes) = build_artifact(&app.customer_id, dtm, decision, phi, routing, self.schema.names(), maps)?;
        let (_, anchor) = self.store.store_explanation_pair(&app.customer_id, dtm, bytes.as_bytes(), &actor.org_id)?;
        self.commit(vec![AnchorTx::new(AnchorPayload::Explanation(anchor.clone()), actor.org_id.clone(), dtm)])?;

        let n = self.case_seq.fetch_add(1, Ordering::SeqCst);
        let case = ApplicationCase {
            case_id: format!("case-{n:06}"),
            application: app,
            org_id: actor.org_id.clone(),
            dtm,
            decision,
            entropy: phi,
            route: routing.route,
            artifact_hash: anchor.explanation_hash,
            model_iteration: snap.iteration,
            status: match routing.route {
                Route::AutoDecide => CaseStatus::AutoDecided,
                Route::HumanReview => CaseStatus::AwaitingReview,
            },
            review: None,
        };
        self.cases.write().insert(case.case_id.clone(), case.clone());
        Ok(case)
    }

    pub fn get_case(&self, actor: &ActorPrincipal, case_id: &str) -> Result<ApplicationCase, GatewayError> {
        let case = self.cases.read().get(case_id).cloned().ok_or_else(|| GatewayError::NotFound(case_id.to_string()))?;
        if actor.role == Role::Customer && actor.actor_id != case.application.customer_id {
            return Err(GatewayError::WrongRole(actor.role));
        }
        Ok(case)
    }

    /// The stored artifact bytes, decrypted from the off-chain store.
    pub fn explanation_bytes(&self, actor: &ActorPrincipal, case_id: &str) -> Result<Vec<u8>, GatewayError> {
        let case = self.get_case(actor, case_id)?;
        let key = StoreKey::versioned(Namespace::Explanations, &case.application.customer_id, case.dtm)?;
        let record = self.store.get(&key)?.ok_or_else(|| GatewayError::NotFound(format!("explanation for {case_id}")))?;
        Ok(self.store.vault().decrypt_record(&record.payload, &record.payload.key_owner)?)
    }

    pub fn list_cases(&self) -> Vec<ApplicationCase> {
        self.cases.read().values().cloned().collect()
    }

    /// Pending cases, highest entropy first.
    pub fn review_queue(&self, actor: &ActorPrincipal) -> Result<Vec<ReviewItem>, GatewayError> {
        Self::require(actor, &[Role::Expert, Role::Developer])?;
        let mut items: Vec<ReviewItem> = self
            .cases
            .read()
            .values()
            .filter(|c| c.status == CaseStatus::AwaitingReview)
            .map(|c| ReviewItem {
                case_id: c.case_id.clone(),
                customer_id: c.application.customer_id.clone(),
                decision: c.decision,
                entropy: c.entropy,
                artifact_hash: c.artifact_hash,
            })
            .collect();
        items.sort_by(|a, b| b.entropy.total_cmp(&a.entropy).then_with(|| a.case_id.cmp(&b.case_id)));
        Ok(items)
    }

    /// Records an expert decision, stores it as the expert's contribution and
    /// buffers the labeled sample for the next retrain.
    pub fn submit_review_decision(&self, actor: &ActorPrincipal, case_id: &str, decision: Decision) -> Result<ApplicationCase, GatewayError> {
        Self::require(actor, &[Role::Expert])?;
        let approved = self
            .consents
            .lock()
            .state_at(&actor.org_id, &actor.actor_id)
            .is_some_and(|s| s.caq == Caq::Approved);
        if !approved {
            return Err(GatewayError::ConsentRequired(actor.actor_id.clone()));
        }
        let mut cases = self.cases.write();
        let case = cases.get_mut(case_id).ok_or_else(|| GatewayError::NotFound(case_id.to_string()))?;
        if case.status != CaseStatus::AwaitingReview {
            return Err(GatewayError::CaseNotPending(case_id.to_string()));
        }
        let dtm = self.tick();
        let record = ReviewRecord { expert_id: actor.actor_id.clone(), decision, dtm };
        let doc = canonical_serialize(&(case_id, &record))?;
        let (_, anchor) =
            self.store.store_document(Namespace::ExpertContributions, &actor.actor_id, dtm, doc.as_bytes(), &actor.org_id)?;
        self.commit(vec![AnchorTx::new(AnchorPayload::Explanation(anchor), actor.org_id.clone(), dtm)])?;
        self.contributions.lock().push(Contribution { expert_id: actor.actor_id.clone(), dtm });

        let features = self.schema.encode(&case.application)?;
        self.training.lock().buffer.push((
            actor.actor_id.clone(),
            Sample { application: case.application.clone(), features, label: decision },
        ));
        case.status = CaseStatus::Reviewed;
        case.review = Some(record);
        Ok(case.clone())
    }

    pub fn annotation_buffer_len(&self) -> usize {
        self.training.lock().buffer.len()
    }

    pub fn labeled_len(&self) -> usize {
        self.training.lock().labeled.len()
    }

    /// Retrains from scratch on labeled ∪ buffer, anchors the new
    /// configuration and swaps it in. In-flight requests keep the snapshot
    /// they already hold.
    pub fn trigger_retrain(&self, actor: &ActorPrincipal) -> Result<RetrainReport, GatewayError> {
        Self::require(actor, &[Role::Developer])?;
        let mut training = self.training.lock();
        if training.buffer.is_empty() {
            return Err(GatewayError::EmptyBuffer);
        }
        let annotated = training.buffer.len();
        let mut labeled = training.labeled.clone();
        labeled.extend(training.buffer.iter().map(|(_, s)| s.clone()));

        let current = self.snapshot()?;
        let hyper = current.model.hyper.clone();
        let xs: Vec<&[f64]> = labeled.iter().map(|s| s.features.as_slice()).collect();
        let ys: Vec<Decision> = labeled.iter().map(|s| s.label).collect();
        let opts = TrainOptions { epochs: self.cfg.train_epochs, seed: self.cfg.seed };
        let mut model = ModelConfig::new(hyper.clone(), self.cfg.seed)?;
        train(&mut model, &xs, &ys, opts)?;
        let auc = match cross_validate(&xs, &ys, &hyper, self.cfg.cv_folds, self.cfg.seed, opts) {
            Ok(cv) => Some(cv.mean_auc),
            Err(ModelError::TooFewSamples { .. }) => None,
            Err(e) => return Err(e.into()),
        };
        let iteration = current.iteration + 1;
        let background = background_of(&labeled, model.input_len());
        let config_hash = self.install_model(model, background, iteration)?;
        training.labeled = labeled;
        training.buffer.clear();
        Ok(RetrainReport { iteration, annotated, labeled_size: training.labeled.len(), auc, config_hash })
    }

    /// Applies a consent event at every organization and anchors each replica.
    /// A processed withdrawal deletes the expert's stored contributions and
    /// drops their buffered annotations.
    pub fn consent_event(&self, actor: &ActorPrincipal, expert_id: &str, kind: ConsentEventKind) -> Result<ConsentState, GatewayError> {
        let allowed = (actor.role == Role::Expert && actor.actor_id == expert_id)
            || (actor.role == Role::Developer && kind == ConsentEventKind::Invalidate);
        if !allowed {
            return Err(GatewayError::WrongRole(actor.role));
        }
        let dtm = self.tick();
        let event = ConsentEvent { kind, actor: actor.actor_id.clone(), dtm };
        let mut consents = self.consents.lock();
        let applied = consents.apply_everywhere(expert_id, &event)?;
        let txs = applied
            .iter()
            .map(|(_, anchor)| AnchorTx::new(AnchorPayload::Consent(anchor.clone()), anchor.org_id.clone(), dtm))
            .collect();
        self.commit(txs)?;
        if kind == ConsentEventKind::ProcessWithdrawal {
            for key in self.store.keys(Namespace::ExpertContributions)? {
                if key.id.rsplit_once('@').is_some_and(|(subject, _)| subject == expert_id) {
                    self.store.delete(&key)?;
                }
            }
            self.training.lock().buffer.retain(|(who, _)| who != expert_id);
        }
        let home = consents.home_org(expert_id).cloned().expect("expert registered");
        Ok(consents.state_at(&home, expert_id).cloned().expect("replica exists"))
    }

    /// Every replica of `expert_id`'s consent state.
    pub fn consent_states(&self, actor: &ActorPrincipal, expert_id: &str) -> Result<Vec<ConsentState>, GatewayError> {
        let allowed = matches!(actor.role, Role::Developer | Role::AuditRegulator) || actor.actor_id == expert_id;
        if !allowed {
            return Err(GatewayError::WrongRole(actor.role));
        }
        let consents = self.consents.lock();
        if consents.home_org(expert_id).is_none() {
            return Err(GatewayError::NotFound(format!("expert {expert_id}")));
        }
        Ok(consents.orgs().iter().filter_map(|o| consents.state_at(o, expert_id).cloned()).collect())
    }

    pub fn audit_case(&self, actor: &ActorPrincipal, case_id: &str) -> Result<TamperVerdict, GatewayError> {
        Self::require(actor, &[Role::AuditRegulator])?;
        let case = self.cases.read().get(case_id).cloned().ok_or_else(|| GatewayError::NotFound(case_id.to_string()))?;
        let ledger = self.ledger.lock();
        let consents = self.consents.lock();
        let verdict = Auditor::new(&ledger, &self.store).with_consents(&consents).audit_explanation(&case.application.customer_id, case.dtm);
        tracing::info!(case_id, reason = ?verdict.reason, "explanation audit");
        Ok(verdict)
    }

    pub fn audit_consent(&self, actor: &ActorPrincipal, expert_id: &str) -> Result<TamperVerdict, GatewayError> {
        Self::require(actor, &[Role::AuditRegulator])?;
        let ledger = self.ledger.lock();
        let consents = self.consents.lock();
        let verdict = audit_consent(&consents, expert_id, Some(&ledger))?;
        tracing::info!(expert_id, reason = ?verdict.reason, "consent audit");
        Ok(verdict)
    }

    /// Audits every contribution the expert ever anchored.
    pub fn audit_contributions(&self, actor: &ActorPrincipal, expert_id: &str) -> Result<AuditReport, GatewayError> {
        Self::require(actor, &[Role::AuditRegulator])?;
        let dtms: Vec<u64> =
            self.contributions.lock().iter().filter(|c| c.expert_id == expert_id).map(|c| c.dtm).collect();
        let ledger = self.ledger.lock();
        let consents = self.consents.lock();
        let auditor = Auditor::new(&ledger, &self.store).with_consents(&consents);
        let mut report = AuditReport {
            total_files: dtms.len() as u64,
            tampered_found: 0,
            elapsed_ops: 0,
            wall_time: Default::default(),
            verdicts: Vec::new(),
        };
        for dtm in dtms {
            let (verdict, ops) = auditor.audit_record(Namespace::ExpertContributions, expert_id, dtm);
            report.elapsed_ops += ops;
            report.tampered_found += u64::from(verdict.tau);
            report.verdicts.push(ItemVerdict {
                namespace: Namespace::ExpertContributions,
                id: crate::offchain::record_id(expert_id, dtm),
                verdict,
            });
        }
        Ok(report)
    }

    /// With `live`, audits the service's own explanation store; otherwise
    /// runs the synthetic tamper experiment.
    pub fn audit_batch(&self, actor: &ActorPrincipal, req: &BatchAuditRequest) -> Result<AuditReport, GatewayError> {
        Self::require(actor, &[Role::AuditRegulator])?;
        if req.live {
            let ledger = self.ledger.lock();
            let consents = self.consents.lock();
            return Ok(Auditor::new(&ledger, &self.store).with_consents(&consents).audit_namespace(Namespace::Explanations)?);
        }
        Ok(batch_audit_experiment(req.file_count, req.tamper_fraction, req.seed)?)
    }

    pub fn ledger_metrics(&self) -> LedgerMetrics {
        let ledger = self.ledger.lock();
        LedgerMetrics {
            height: ledger.height(),
            valid: ledger.validate_chain().valid,
            explanation_anchors: ledger.count_kind(AnchorKind::ExplanationAnchor),
            consent_anchors: ledger.count_kind(AnchorKind::ConsentAnchor),
            model_anchors: ledger.count_kind(AnchorKind::ModelConfigAnchor),
            credential_anchors: ledger.count_kind(AnchorKind::ActorCredentialAnchor),
            perf: ledger.perf_report().ok(),
        }
    }

    /// Cases whose `(ID, DTM, H_E)` triple is not committed.
    pub fn unanchored_cases(&self) -> Vec<String> {
        let ledger = self.ledger.lock();
        self.cases
            .read()
            .values()
            .filter(|c| {
                let triple = OnChainAnchor {
                    customer_id: c.application.customer_id.clone(),
                    dtm: c.dtm,
                    explanation_hash: c.artifact_hash,
                };
                ledger.find_triple(&triple).is_none()
            })
            .map(|c| c.case_id.clone())
            .collect()
    }

    /// Committed explanation anchors that belong to application cases rather
    /// than expert contributions.
    pub fn case_anchor_count(&self) -> usize {
        self.ledger.lock().count_kind(AnchorKind::ExplanationAnchor) - self.contributions.lock().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAuditRequest {
    #[serde(default)]
    pub live: bool,
    #[serde(default = "default_count")]
    pub file_count: usize,
    #[serde(default)]
    pub tamper_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_count() -> usize {
    200
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hitl::{initial_labeled, synth_dataset, SynthParams};
    use crate::crypto::KeyVault;
    use crate::model::Hyperparams;

    pub(crate) fn small_gateway() -> Gateway {
        let schema = Schema::default_loan();
        let data = synth_dataset(&schema, SynthParams { n: 300, fund_fraction: 0.45, seed: 3 }).unwrap();
        let labeled: Vec<Sample> = initial_labeled(&data, 100, 1).into_iter().map(|i| data.samples[i].clone()).collect();
        let cfg = GatewayConfig { train_epochs: 1, shap_permutations: 4, lime_perturbations: 60, ..Default::default() };
        let model = ModelConfig::new(Hyperparams::loan_cnn(), 5).unwrap();
        let store = OffChainStore::in_memory(Arc::new(KeyVault::new()));
        Gateway::new(cfg, schema, store, model, labeled).unwrap()
    }

    #[test]
    fn role_checks_on_decisions() {
        let gw = small_gateway();
        let org = OrgId::from("org1");
        let customer = gw.register_actor("cust-1", Role::Customer, &org, "tok-c").unwrap();
        let expert = gw.register_actor("h1", Role::Expert, &org, "tok-h").unwrap();
        let app = gw.schema().application("cust-1", &[1; 18]);
        let case = gw.process_application(&customer, app).unwrap();
        assert_eq!(gw.submit_review_decision(&customer, &case.case_id, Decision::Fund), Err(GatewayError::WrongRole(Role::Customer)));
        if case.status == CaseStatus::AutoDecided {
            gw.consent_event(&expert, "h1", ConsentEventKind::GrantAcquisition).unwrap();
            assert_eq!(
                gw.submit_review_decision(&expert, &case.case_id, Decision::Fund),
                Err(GatewayError::CaseNotPending(case.case_id.clone()))
            );
        }
        assert_eq!(gw.authenticate("nope"), Err(GatewayError::Unauthorized));
        assert_eq!(gw.authenticate("tok-h").unwrap(), expert);
        assert!(gw.unanchored_cases().is_empty());
    }
}
