#![allow(dead_code)]

use std::sync::Arc;

use trustboost::crypto::{KeyVault, OrgId};
use trustboost::gateway::{ActorPrincipal, Gateway, GatewayConfig, Role};
use trustboost::hitl::{initial_labeled, synth_dataset, SynthParams};
use trustboost::model::train::{train, TrainOptions};
use trustboost::model::{Dataset, LoanApplication, ModelConfig, Sample, Schema};
use trustboost::offchain::OffChainStore;

pub struct Fixture {
    pub gw: Arc<Gateway>,
    pub data: Dataset,
    pub developer: ActorPrincipal,
    pub expert: ActorPrincipal,
    pub expert2: ActorPrincipal,
    pub regulator: ActorPrincipal,
}

pub const TOKENS: [(&str, Role, &str, &str); 5] = [
    ("developer-1", Role::Developer, "org1", "tok-dev"),
    ("expert-1", Role::Expert, "org2", "tok-exp"),
    ("expert-2", Role::Expert, "org3", "tok-exp2"),
    ("regulator-1", Role::AuditRegulator, "org4", "tok-reg"),
    ("cust-00000", Role::Customer, "org1", "tok-cust"),
];

/// Gateway over a briefly trained loan model. `threshold` 0 sends every case
/// to review, 1 decides every case automatically.
pub fn fixture(threshold: f64) -> Fixture {
    let schema = Schema::default_loan();
    let data = synth_dataset(&schema, SynthParams { n: 400, fund_fraction: 0.45, seed: 5 }).unwrap();
    let labeled: Vec<Sample> = initial_labeled(&data, 120, 2).into_iter().map(|i| data.samples[i].clone()).collect();
    let cfg = GatewayConfig { threshold, train_epochs: 2, cv_folds: 3, shap_permutations: 4, lime_perturbations: 60, ..Default::default() };
    let mut model = ModelConfig::loan_cnn(3);
    let xs: Vec<&[f64]> = labeled.iter().map(|s| s.features.as_slice()).collect();
    let ys: Vec<_> = labeled.iter().map(|s| s.label).collect();
    train(&mut model, &xs, &ys, TrainOptions { epochs: 2, seed: 3 }).unwrap();
    let store = OffChainStore::in_memory(Arc::new(KeyVault::new()));
    let gw = Arc::new(Gateway::new(cfg, schema, store, model, labeled).unwrap());
    let mut principals = Vec::new();
    for (id, role, org, tok) in TOKENS {
        principals.push(gw.register_actor(id, role, &OrgId::from(org), tok).unwrap());
    }
    Fixture {
        gw,
        data,
        developer: principals[0].clone(),
        expert: principals[1].clone(),
        expert2: principals[2].clone(),
        regulator: principals[3].clone(),
    }
}

/// The `i`-th synthetic application, renamed to a distinct customer.
pub fn application(data: &Dataset, i: usize) -> LoanApplication {
    let mut app = data.samples[i].application.clone();
    app.customer_id = format!("cust-{i:05}");
    app
}
