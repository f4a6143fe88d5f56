mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{application, fixture, TOKENS};
use trustboost::consent::ConsentEventKind;
use trustboost::crypto::sha256;
use trustboost::gateway::{http, CaseStatus, Role};
use trustboost::ledger::AnchorKind;
use trustboost::offchain::{Namespace, StoreKey};

struct Reply {
    status: StatusCode,
    content_type: String,
    bytes: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or(Value::Null)
    }
}

async fn call(app: &axum::Router, method: &str, path: &str, token: Option<&str>, body: Option<Value>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let content_type =
        resp.headers().get("content-type").map(|v| v.to_str().unwrap().to_string()).unwrap_or_default();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, content_type, bytes }
}

fn token(role: Role) -> &'static str {
    TOKENS.iter().find(|t| t.1 == role).unwrap().3
}

#[tokio::test]
async fn served_artifact_matches_both_hashes() {
    let f = fixture(0.80);
    let app = http::router(f.gw.clone());
    let body = serde_json::to_value(application(&f.data, 0)).unwrap();
    let created = call(&app, "POST", "/applications", Some("tok-cust"), Some(body)).await;
    assert_eq!(created.status, StatusCode::CREATED);
    let case = created.json();
    let id = case["case_id"].as_str().unwrap();

    let served = call(&app, "GET", &format!("/applications/{id}/explanation"), Some("tok-cust"), None).await;
    assert_eq!(served.status, StatusCode::OK);
    assert_eq!(served.content_type, "application/json");
    let served_hash = sha256(&served.bytes).to_hex();
    assert_eq!(case["artifact_hash"].as_str().unwrap(), served_hash);

    let dtm = case["dtm"].as_u64().unwrap();
    let key = StoreKey::versioned(Namespace::Explanations, "cust-00000", dtm).unwrap();
    let record = f.gw.store().get(&key).unwrap().unwrap();
    assert_eq!(record.explanation_hash.to_hex(), served_hash);
    assert!(f.gw.with_ledger(|l| l.find_triple(&record.triple())).is_some());

    let svg = call(&app, "GET", &format!("/applications/{id}/explanation.svg"), Some("tok-cust"), None).await;
    assert_eq!(svg.content_type, "image/svg+xml");
    assert!(String::from_utf8(svg.bytes).unwrap().starts_with("<svg"));

    let metrics = call(&app, "GET", "/metrics/ledger", None, None).await.json();
    assert_eq!(metrics["valid"], json!(true));
    assert_eq!(metrics["explanation_anchors"], json!(1));
    assert_eq!(metrics["model_anchors"], json!(1));
    assert_eq!(metrics["credential_anchors"], json!(5));
    // two experts, four replicas each
    assert_eq!(metrics["consent_anchors"], json!(8));
}

#[tokio::test]
async fn role_matrix() {
    let f = fixture(0.0);
    let app = http::router(f.gw.clone());
    let case = f.gw.process_application(&f.developer, application(&f.data, 1)).unwrap();
    let id = case.case_id.as_str();
    let app_body = serde_json::to_value(application(&f.data, 2)).unwrap();
    let endpoints: Vec<(&str, String, Option<Value>, Vec<Role>)> = vec![
        ("POST", "/applications".into(), Some(app_body), vec![Role::Developer]),
        ("GET", "/review-queue".into(), None, vec![Role::Expert, Role::Developer]),
        ("POST", format!("/review-queue/{id}/decision"), Some(json!({"decision": "fund"})), vec![Role::Expert]),
        ("POST", "/consents/expert-1/events".into(), Some(json!({"kind": "GrantAccess"})), vec![Role::Expert]),
        ("GET", "/consents/expert-1".into(), None, vec![Role::Expert, Role::Developer, Role::AuditRegulator]),
        ("POST", format!("/audits/explanations/{id}"), None, vec![Role::AuditRegulator]),
        ("POST", "/audits/consents/expert-1".into(), None, vec![Role::AuditRegulator]),
        ("POST", "/audits/contributions/expert-1".into(), None, vec![Role::AuditRegulator]),
        ("POST", "/audits/batch".into(), Some(json!({"file_count": 50, "tamper_fraction": 0.1, "seed": 1})), vec![Role::AuditRegulator]),
        ("POST", "/admin/retrain".into(), None, vec![Role::Developer]),
    ];
    for (method, path, body, allowed) in &endpoints {
        let anon = call(&app, method, path, None, body.clone()).await;
        assert_eq!(anon.status, StatusCode::UNAUTHORIZED, "{method} {path} without credential");
        let forged = call(&app, method, path, Some("forged"), body.clone()).await;
        assert_eq!(forged.status, StatusCode::UNAUTHORIZED);
        for role in Role::ALL {
            let reply = call(&app, method, path, Some(token(role)), body.clone()).await;
            let code = reply.json()["code"].as_str().unwrap_or("").to_string();
            if allowed.contains(&role) {
                assert_ne!(code, "wrong_role", "{role:?} should reach {method} {path}");
            } else {
                assert_eq!(reply.status, StatusCode::FORBIDDEN, "{role:?} on {method} {path}");
                assert_eq!(code, "wrong_role");
            }
        }
    }
    // a customer may submit and read only their own application
    let own = serde_json::to_value(trustboost::model::LoanApplication {
        customer_id: "cust-00000".into(),
        ..application(&f.data, 3)
    })
    .unwrap();
    assert_eq!(call(&app, "POST", "/applications", Some("tok-cust"), Some(own)).await.status, StatusCode::CREATED);
    assert_eq!(call(&app, "GET", &format!("/applications/{id}"), Some("tok-cust"), None).await.status, StatusCode::FORBIDDEN);
    // Invalidate is the one consent event a developer may trigger
    let inv = call(&app, "POST", "/consents/expert-2/events", Some("tok-dev"), Some(json!({"kind": "Invalidate"}))).await;
    assert_eq!(inv.status, StatusCode::OK);
    let other = call(&app, "POST", "/consents/expert-2/events", Some("tok-exp"), Some(json!({"kind": "GrantAccess"}))).await;
    assert_eq!(other.status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn review_consent_and_retrain_flow() {
    let f = fixture(0.0);
    let app = http::router(f.gw.clone());
    for i in 0..4 {
        let c = f.gw.process_application(&f.developer, application(&f.data, i)).unwrap();
        assert_eq!(c.status, CaseStatus::AwaitingReview);
    }
    let queue = call(&app, "GET", "/review-queue", Some("tok-exp"), None).await.json();
    let items = queue.as_array().unwrap();
    assert_eq!(items.len(), 4);
    let entropies: Vec<f64> = items.iter().map(|i| i["entropy"].as_f64().unwrap()).collect();
    assert!(entropies.windows(2).all(|w| w[0] >= w[1]));
    let first = items[0]["case_id"].as_str().unwrap().to_string();

    let decide = |id: String, tok: &'static str| {
        let app = app.clone();
        async move { call(&app, "POST", &format!("/review-queue/{id}/decision"), Some(tok), Some(json!({"decision": "reject"}))).await }
    };
    let refused = decide(first.clone(), "tok-exp").await;
    assert_eq!((refused.status, refused.json()["code"].clone()), (StatusCode::FORBIDDEN, json!("consent_required")));

    let anchors_before = f.gw.ledger_metrics().consent_anchors;
    let granted = call(&app, "POST", "/consents/expert-1/events", Some("tok-exp"), Some(json!({"kind": "GrantAcquisition"}))).await;
    assert_eq!(granted.json()["caq"], json!("approved"));
    assert_eq!(f.gw.ledger_metrics().consent_anchors, anchors_before + 4);
    let replicas = call(&app, "GET", "/consents/expert-1", Some("tok-reg"), None).await.json();
    assert!(replicas.as_array().unwrap().iter().all(|r| r["caq"] == json!("approved")));
    let again = call(&app, "POST", "/consents/expert-1/events", Some("tok-exp"), Some(json!({"kind": "GrantAcquisition"}))).await;
    assert_eq!((again.status, again.json()["code"].clone()), (StatusCode::CONFLICT, json!("illegal_transition")));

    let done = decide(first.clone(), "tok-exp").await;
    assert_eq!(done.status, StatusCode::OK);
    assert_eq!(done.json()["status"], json!("reviewed"));
    assert_eq!(done.json()["review"]["expert_id"], json!("expert-1"));
    assert_eq!(decide(first.clone(), "tok-exp").await.status, StatusCode::CONFLICT);
    assert_eq!(call(&app, "GET", "/review-queue", Some("tok-exp"), None).await.json().as_array().unwrap().len(), 3);
    let second = items[1]["case_id"].as_str().unwrap().to_string();
    assert_eq!(decide(second, "tok-exp").await.status, StatusCode::OK);

    let labeled = f.gw.labeled_len();
    let models = f.gw.ledger_metrics().model_anchors;
    let report = call(&app, "POST", "/admin/retrain", Some("tok-dev"), None).await;
    assert_eq!(report.status, StatusCode::OK);
    let report = report.json();
    assert_eq!(report["annotated"], json!(2));
    assert_eq!(report["labeled_size"], json!(labeled + 2));
    assert_eq!(report["iteration"], json!(1));
    assert_eq!(f.gw.ledger_metrics().model_anchors, models + 1);
    assert_eq!(f.gw.snapshot().unwrap().config_hash.to_hex(), report["config_hash"].as_str().unwrap());
    let empty = call(&app, "POST", "/admin/retrain", Some("tok-dev"), None).await;
    assert_eq!((empty.status, empty.json()["code"].clone()), (StatusCode::CONFLICT, json!("empty_buffer")));

    let contributions = call(&app, "POST", "/audits/contributions/expert-1", Some("tok-reg"), None).await.json();
    assert_eq!(contributions["total_files"], json!(2));
    assert_eq!(contributions["tampered_found"], json!(0));
    // contributions do not count as case anchors
    assert_eq!(f.gw.case_anchor_count(), f.gw.list_cases().len());
}

#[tokio::test]
async fn withdrawal_then_audit_is_lawful() {
    let f = fixture(0.0);
    let app = http::router(f.gw.clone());
    f.gw.consent_event(&f.expert, "expert-1", ConsentEventKind::GrantAcquisition).unwrap();
    for i in 0..3 {
        let c = f.gw.process_application(&f.developer, application(&f.data, i)).unwrap();
        f.gw.submit_review_decision(&f.expert, &c.case_id, trustboost::model::Decision::Fund).unwrap();
    }
    assert_eq!(f.gw.annotation_buffer_len(), 3);
    for kind in ["RequestWithdrawal", "ProcessWithdrawal"] {
        let r = call(&app, "POST", "/consents/expert-1/events", Some("tok-exp"), Some(json!({ "kind": kind }))).await;
        assert_eq!(r.status, StatusCode::OK, "{kind}");
    }
    assert!(f.gw.store().keys(Namespace::ExpertContributions).unwrap().is_empty());
    assert_eq!(f.gw.annotation_buffer_len(), 0);
    let report = call(&app, "POST", "/audits/contributions/expert-1", Some("tok-reg"), None).await.json();
    assert_eq!(report["total_files"], json!(3));
    assert_eq!(report["tampered_found"], json!(0));
    for v in report["verdicts"].as_array().unwrap() {
        assert_eq!(v["verdict"]["reason"], json!("DataWithdrawn"));
        assert_eq!(v["verdict"]["tau"], json!(0));
    }
    let consent = call(&app, "POST", "/audits/consents/expert-1", Some("tok-reg"), None).await.json();
    assert_eq!(consent["tau"], json!(0));
    // the withdrawn expert can no longer decide
    let c = f.gw.process_application(&f.developer, application(&f.data, 9)).unwrap();
    let r = call(&app, "POST", &format!("/review-queue/{}/decision", c.case_id), Some("tok-exp"), Some(json!({"decision": "fund"}))).await;
    assert_eq!(r.json()["code"], json!("consent_required"));
}

#[tokio::test]
async fn regulator_audits_detect_tampering() {
    let f = fixture(1.0);
    let app = http::router(f.gw.clone());
    let a = f.gw.process_application(&f.developer, application(&f.data, 0)).unwrap();
    let b = f.gw.process_application(&f.developer, application(&f.data, 1)).unwrap();
    assert_eq!(a.status, CaseStatus::AutoDecided);
    let clean = call(&app, "POST", &format!("/audits/explanations/{}", a.case_id), Some("tok-reg"), None).await.json();
    assert_eq!(clean["tau"], json!(0));

    let key = StoreKey::versioned(Namespace::Explanations, &b.application.customer_id, b.dtm).unwrap();
    let mut raw = f.gw.store().get_raw(&key).unwrap().unwrap();
    let pos = raw.len() / 2;
    raw[pos] ^= 0x01;
    f.gw.store().put_raw(&key, &raw).unwrap();
    let hit = call(&app, "POST", &format!("/audits/explanations/{}", b.case_id), Some("tok-reg"), None).await.json();
    assert_eq!(hit["tau"], json!(1));
    let live = call(&app, "POST", "/audits/batch", Some("tok-reg"), Some(json!({"live": true}))).await.json();
    assert_eq!((live["total_files"].clone(), live["tampered_found"].clone()), (json!(2), json!(1)));

    f.gw.with_consents(|c| c.tamper_replica(&"org3".into(), "expert-1", |s| s.caq = trustboost::consent::Caq::Approved));
    let consent = call(&app, "POST", "/audits/consents/expert-1", Some("tok-reg"), None).await.json();
    assert_eq!(consent["tau"], json!(1));

    let batch = call(&app, "POST", "/audits/batch", Some("tok-reg"), Some(json!({"file_count": 200, "tamper_fraction": 0.1, "seed": 4}))).await;
    assert_eq!(batch.json()["tampered_found"], json!(20));
    let tiny = call(&app, "POST", "/audits/batch", Some("tok-reg"), Some(json!({"file_count": 5, "tamper_fraction": 0.1}))).await;
    assert_eq!((tiny.status, tiny.json()["code"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("insufficient_files")));
    assert_eq!(call(&app, "POST", "/audits/explanations/case-999999", Some("tok-reg"), None).await.status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests() {
    let f = fixture(0.8);
    let app = http::router(f.gw.clone());
    let bad_json = call(&app, "POST", "/applications", Some("tok-dev"), Some(json!({"nope": 1}))).await;
    assert_eq!((bad_json.status, bad_json.json()["code"].clone()), (StatusCode::BAD_REQUEST, json!("bad_request")));
    let mut app_value = serde_json::to_value(application(&f.data, 0)).unwrap();
    app_value["attributes"][0] = json!("not-a-category");
    let unknown = call(&app, "POST", "/applications", Some("tok-dev"), Some(app_value)).await;
    assert_eq!((unknown.status, unknown.json()["code"].clone()), (StatusCode::UNPROCESSABLE_ENTITY, json!("unknown_category")));
    let short = call(&app, "POST", "/applications", Some("tok-dev"), Some(json!({"customer_id": "c", "attributes": ["a"]}))).await;
    assert_eq!(short.status, StatusCode::UNPROCESSABLE_ENTITY);
    let missing = call(&app, "GET", "/applications/case-424242", Some("tok-dev"), None).await;
    assert_eq!((missing.status, missing.json()["code"].clone()), (StatusCode::NOT_FOUND, json!("not_found")));
    let unknown_expert = call(&app, "GET", "/consents/ghost", Some("tok-reg"), None).await;
    assert_eq!(unknown_expert.status, StatusCode::NOT_FOUND);
}

#[test]
fn resubmission_creates_new_anchored_case() {
    let f = fixture(0.8);
    let a = f.gw.process_application(&f.developer, application(&f.data, 0)).unwrap();
    let b = f.gw.process_application(&f.developer, application(&f.data, 0)).unwrap();
    assert_ne!(a.case_id, b.case_id);
    assert!(b.dtm > a.dtm);
    assert_eq!(f.gw.with_ledger(|l| l.anchors_for("cust-00000").len()), 2);
    assert!(f.gw.unanchored_cases().is_empty());
    assert_eq!(f.gw.with_ledger(|l| l.count_kind(AnchorKind::ExplanationAnchor)), 2);
}

#[test]
fn retrain_swaps_snapshot_atomically() {
    let f = fixture(0.0);
    f.gw.consent_event(&f.expert, "expert-1", ConsentEventKind::GrantAcquisition).unwrap();
    for i in 0..6 {
        let c = f.gw.process_application(&f.developer, application(&f.data, i)).unwrap();
        f.gw.submit_review_decision(&f.expert, &c.case_id, c.decision.argmax()).unwrap();
    }
    let old = f.gw.snapshot().unwrap();
    std::thread::scope(|s| {
        let gw = &f.gw;
        let dev = &f.developer;
        let data = &f.data;
        let readers: Vec<_> = (0..2)
            .map(|t| s.spawn(move || (0..4).map(|k| gw.process_application(dev, application(data, 50 + t * 10 + k)).unwrap()).collect::<Vec<_>>()))
            .collect();
        gw.trigger_retrain(dev).unwrap();
        for r in readers {
            for case in r.join().unwrap() {
                // whichever snapshot served the case, its prediction is reproducible from it
                let snap = if case.model_iteration == 0 { old.clone() } else { gw.snapshot().unwrap() };
                let x = gw.schema().encode(&case.application).unwrap();
                assert_eq!(snap.model.predict(&x).unwrap(), case.decision);
            }
        }
    });
    assert_eq!(f.gw.snapshot().unwrap().iteration, 1);
    assert!(f.gw.unanchored_cases().is_empty());
}
