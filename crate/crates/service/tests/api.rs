use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use clinrisk_core::disease::DiseaseCatalog;
use clinrisk_core::ehr::{encode, generate_synthetic, PlantedRule, SyntheticCohortSpec};
use clinrisk_core::retain::{ModelConfig, OutputHead};
use clinrisk_core::Model;
use clinrisk_service::{response_schema, router, AppState, Engine, ScenarioStore, SCHEMA_VERSION};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const DESCRIPTIONS: &str = r#"{"code":"D001","name":"Anemia","sections":{"description":"low haemoglobin"}}"#;

fn engine() -> Engine {
    let spec = SyntheticCohortSpec {
        n_patients: 120,
        vocab_sizes: (8, 6),
        rules: vec![PlantedRule { trigger: "D005".into(), protective: Some("T000".into()), target: "D001".into(), p_with_trigger: 0.9, p_base: 0.1 }],
        rng_seed: 7,
    };
    let (vocab, samples) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig { embed_dim: 8, hidden_dim: 8, reverse_time: true, head: OutputHead::Sigmoid, init_seed: 3 };
    let model = Model::new(config, &vocab, vec!["D000".into(), "D001".into(), "D002".into()]).unwrap();
    Engine::new(vocab, samples, model).unwrap()
}

fn app_with(store: ScenarioStore) -> (Router, AppState) {
    let state = AppState::new(Some(engine()), DiseaseCatalog::parse(DESCRIPTIONS).unwrap(), store);
    (router(state.clone()), state)
}

fn app() -> (Router, AppState) {
    app_with(ScenarioStore::in_memory())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder.header("content-type", "application/json").body(Body::from(b.to_string())).unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let body: Value = serde_json::from_slice(&bytes).expect("every response is JSON");
    let kind = if status.is_success() { response_kind(method, uri) } else { Some("error_response") };
    if let Some(kind) = kind {
        assert_valid(kind, &body);
    }
    (status, body)
}

/// The schema entry a successful response must satisfy.
fn response_kind(method: &str, uri: &str) -> Option<&'static str> {
    let path = uri.split('?').next().unwrap();
    let segments: Vec<&str> = path.trim_start_matches("/api/").split('/').collect();
    Some(match (method, segments.as_slice()) {
        ("GET", ["meta"]) => "meta_response",
        ("GET", ["patients"]) => "patient_page_response",
        ("GET", ["patients", _]) => "patient_response",
        ("POST", ["predict"]) => "predict_response",
        ("POST", ["similar"]) => "similar_response",
        ("POST", ["similar", "aggregate"]) => "aggregate_response",
        ("POST", ["scenarios"]) | ("GET", ["scenarios", _]) | ("POST", ["scenarios", _, "edits"]) => "scenario_response",
        ("GET", ["scenarios"]) => "scenario_list_response",
        ("POST", ["significance"]) => "significance_response",
        ("GET", ["diseases", _]) => "disease_response",
        _ => return None,
    })
}

fn assert_valid(kind: &'static str, body: &Value) {
    static VALIDATORS: OnceLock<std::sync::Mutex<HashMap<&'static str, Arc<jsonschema::Validator>>>> = OnceLock::new();
    let validator = VALIDATORS
        .get_or_init(Default::default)
        .lock()
        .unwrap()
        .entry(kind)
        .or_insert_with(|| Arc::new(jsonschema::validator_for(&response_schema(kind).expect("known kind")).unwrap()))
        .clone();
    let errors: Vec<String> = validator.iter_errors(body).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{kind} violates its schema: {errors:?}\n{body}");
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode, code: &str) {
    assert_eq!(status, expected, "{body}");
    assert_eq!(body["schema_version"], SCHEMA_VERSION);
    assert_eq!(body["error_code"], code, "{body}");
    assert!(body["message"].is_string());
    assert!(body.get("detail").is_some());
}

fn first_patient(state: &AppState) -> String {
    state.engine.as_ref().unwrap().samples[0].patient_id().to_string()
}

#[tokio::test]
async fn meta_lists_targets_and_treatments() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/api/meta", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["schema_version"], SCHEMA_VERSION);
    assert_eq!(body["n_patients"], 120);
    assert_eq!(body["targets"].as_array().unwrap().len(), 3);
    assert_eq!(body["targets"][1]["code"], "D001");
    assert_eq!(body["treatments"].as_array().unwrap().len(), 6);
}

#[tokio::test]
async fn patients_are_paged() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/api/patients?page=3&per_page=50", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["total"], 120);
    let page = body["patients"].as_array().unwrap();
    assert_eq!(page.len(), 20);
    let first = &page[0];
    assert!(first["event_count"].as_u64().unwrap() >= first["step_count"].as_u64().unwrap());

    let (status, body) = call(&app, "GET", "/api/patients?per_page=501", None).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
    let (status, body) = call(&app, "GET", "/api/patients?page=0", None).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
    let (status, body) = call(&app, "GET", "/api/patients?page=abc", None).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "malformed_request");
}

#[tokio::test]
async fn patient_detail_and_missing_patient() {
    let (app, state) = app();
    let id = first_patient(&state);
    let (status, body) = call(&app, "GET", &format!("/api/patients/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["patient"]["patient_id"], id.as_str());
    let codes = body["codes"].as_array().unwrap();
    assert!(!codes.is_empty());
    assert!(codes.iter().all(|c| c["kind"].is_string() && c["display_name"].is_string()));

    let (status, body) = call(&app, "GET", "/api/patients/nobody", None).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "patient_not_found");
    assert_eq!(body["detail"]["patient_id"], "nobody");
}

#[tokio::test]
async fn predict_matches_direct_forward_pass() {
    let (app, state) = app();
    let engine = state.engine.as_ref().unwrap();
    let sample = &engine.samples[5];
    let direct = engine.model.forward(&encode(&sample.input, &engine.vocabulary).unwrap()).unwrap();

    let (status, body) = call(&app, "POST", "/api/predict", Some(json!({ "patient_id": sample.patient_id(), "k": 10 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let served: clinrisk_core::Prediction = serde_json::from_value(body["prediction"].clone()).unwrap();
    assert_eq!(served, direct);

    let ranking: Vec<String> = serde_json::from_value(body["ranking"].clone()).unwrap();
    let probs: Vec<f64> = ranking.iter().map(|c| direct.probability(c).unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));

    let similar = body["similar"].as_array().unwrap();
    assert_eq!(similar.len(), 10);
    assert!(similar.iter().all(|s| s["patient_id"] != sample.patient_id()));
    for (code, share) in body["prevalence"].as_object().unwrap() {
        let share = share.as_f64().unwrap();
        assert!((0.0..=1.0).contains(&share), "{code}");
        let carriers = similar.iter().filter(|s| engine.patient(s["patient_id"].as_str().unwrap()).unwrap().labels.contains(code)).count();
        assert_eq!(share, carriers as f64 / 10.0);
    }
}

#[tokio::test]
async fn predict_filters_targets_and_accepts_raw_sequences() {
    let (app, state) = app();
    let engine = state.engine.as_ref().unwrap();
    let sample = &engine.samples[2];
    let full = engine.model.forward(&encode(&sample.input, &engine.vocabulary).unwrap()).unwrap();

    let (status, body) = call(&app, "POST", "/api/predict", Some(json!({ "sequence": sample.input, "targets": ["D002", "D000"] }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["prediction"]["target_codes"], json!(["D002", "D000"]));
    let p: Vec<f64> = serde_json::from_value(body["prediction"]["probabilities"].clone()).unwrap();
    assert_eq!(p, vec![full.probabilities[2], full.probabilities[0]]);
    let influence = body["prediction"]["influence"].as_array().unwrap();
    assert_eq!(influence.len(), full.influence.len());
    assert!(influence.iter().all(|e| e["per_target"].as_array().unwrap().len() == 2));

    let (status, body) = call(&app, "POST", "/api/predict", Some(json!({ "patient_id": sample.patient_id(), "targets": ["ZZZ"] }))).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "unknown_target");

    let mut bad = sample.input.clone();
    bad.steps[0].codes.insert("XXX".into());
    let (status, body) = call(&app, "POST", "/api/predict", Some(json!({ "sequence": bad }))).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "unknown_code");

    let (status, body) = call(&app, "POST", "/api/predict", Some(json!({ "patient_id": sample.patient_id(), "sequence": sample.input }))).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
}

#[tokio::test]
async fn malformed_bodies_are_rejected() {
    let (app, _) = app();
    let req = Request::builder().method("POST").uri("/api/predict").header("content-type", "application/json").body(Body::from("{nope")).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let body: Value = serde_json::from_slice(&res.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_valid("error_response", &body);
    assert_error(status, &body, StatusCode::BAD_REQUEST, "malformed_request");

    let (status, body) = call(&app, "POST", "/api/similar", Some(json!({ "patient_id": 3 }))).await;
    assert_error(status, &body, StatusCode::BAD_REQUEST, "malformed_request");
    let (status, body) = call(&app, "GET", "/api/nowhere", None).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "not_found");
}

#[tokio::test]
async fn similar_ranks_filters_and_bins() {
    let (app, state) = app();
    let id = first_patient(&state);
    let engine = state.engine.as_ref().unwrap();

    let (status, body) = call(&app, "POST", "/api/similar", Some(json!({ "patient_id": id, "k": 200, "bins": 10 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["scored"], 119);
    let distances: Vec<f64> = body["patients"].as_array().unwrap().iter().map(|p| p["distance"].as_f64().unwrap()).collect();
    assert_eq!(distances.len(), 119);
    assert!(distances.windows(2).all(|w| w[0] <= w[1]));
    let counts: Vec<usize> = serde_json::from_value(body["histogram"]["counts"].clone()).unwrap();
    assert_eq!(counts.len(), 10);
    assert_eq!(counts.iter().sum::<usize>(), 119);

    let (lo, hi) = (distances[10], distances[40]);
    let (_, body) = call(&app, "POST", "/api/similar", Some(json!({ "patient_id": id, "k": 500, "distance_range": [lo, hi] }))).await;
    let within = body["patients"].as_array().unwrap();
    assert!(within.iter().all(|p| (lo..=hi).contains(&p["distance"].as_f64().unwrap())));
    assert_eq!(within.len(), distances.iter().filter(|d| (lo..=hi).contains(*d)).count());

    let keys = json!([{ "code": "D005" }, { "code": "D001", "after_previous": true }]);
    let (_, body) = call(&app, "POST", "/api/similar", Some(json!({ "patient_id": id, "k": 500, "key_events": keys }))).await;
    let matched = body["patients"].as_array().unwrap();
    assert!(!matched.is_empty());
    for p in matched {
        let s = engine.patient(p["patient_id"].as_str().unwrap()).unwrap();
        let full = clinrisk_core::similarity::full_sequence(s);
        let first = full.iter().position(|st| st.codes.contains("D005")).unwrap();
        assert!(full[first + 1..].iter().any(|st| st.codes.contains("D001")));
    }
    assert_eq!(body["warnings"], json!([]));

    let (status, body) = call(&app, "POST", "/api/similar", Some(json!({ "patient_id": id, "key_events": [{ "code": "QQQ" }] }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["matched"], 0);
    assert_eq!(body["warnings"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn aggregate_builds_a_flow_over_the_selection() {
    let (app, state) = app();
    let engine = state.engine.as_ref().unwrap();
    let id = first_patient(&state);
    let selection: Vec<&str> = engine.samples[1..30].iter().map(|s| s.patient_id()).collect();
    let (status, body) = call(&app, "POST", "/api/similar/aggregate", Some(json!({ "patient_id": id, "selection": selection, "n_stages": 2 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["splits"].as_array().unwrap().len(), 29);
    assert_eq!(body["flow"]["n_stages"], 2);
    let nodes = body["flow"]["nodes"].as_array().unwrap();
    assert!(nodes.iter().all(|n| n["stage"].as_u64().unwrap() < 2));
    let stage0: u64 = nodes.iter().filter(|n| n["stage"] == 0).map(|n| n["patient_count"].as_u64().unwrap()).sum();
    let with_outcome = body["splits"].as_array().unwrap().iter().filter(|s| !s["outcome"].as_array().unwrap().is_empty()).count();
    assert_eq!(stage0 as usize, with_outcome);

    let (status, body) = call(&app, "POST", "/api/similar/aggregate", Some(json!({ "patient_id": id, "selection": ["ghost"] }))).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "patient_not_found");
}

#[tokio::test]
async fn scenario_lifecycle() {
    let (app, state) = app();
    let engine = state.engine.as_ref().unwrap();
    let sample = &engine.samples[4];
    let id = sample.patient_id();

    let (status, body) = call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": id, "label": "baseline" }))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["scenario"]["scenario_id"], "s1");
    let (_, body) = call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": id }))).await;
    assert_eq!(body["scenario"]["scenario_id"], "s2");
    assert_eq!(body["scenario"]["label"], "s2");

    let t = sample.input.prediction_time - 0.5;
    let edit = json!({ "kind": "add", "code": "T000", "timestamp": t });
    let (status, body) = call(&app, "POST", "/api/scenarios/s2/edits", Some(edit)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let edited: clinrisk_core::ehr::EventSequence = serde_json::from_value(body["scenario"]["edited_sequence"].clone()).unwrap();
    assert!(edited.contains_code("T000"));
    let direct = engine.model.forward(&encode(&edited, &engine.vocabulary).unwrap()).unwrap();
    assert_eq!(serde_json::from_value::<clinrisk_core::Prediction>(body["scenario"]["prediction"].clone()).unwrap(), direct);

    let bad = json!({ "kind": "remove", "step": 99, "code": "T000" });
    let (status, body) = call(&app, "POST", "/api/scenarios/s2/edits", Some(bad)).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_edit");
    let (_, body) = call(&app, "GET", "/api/scenarios/s2", None).await;
    assert_eq!(body["scenario"]["edits"].as_array().unwrap().len(), 1);

    let (status, body) = call(&app, "POST", "/api/scenarios/s9/edits", Some(json!({ "kind": "add", "code": "T000", "timestamp": t }))).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "scenario_not_found");
    let (status, body) = call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": "ghost" }))).await;
    assert_error(status, &body, StatusCode::NOT_FOUND, "patient_not_found");

    let (status, body) = call(&app, "GET", &format!("/api/scenarios?base={id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["scenarios"].as_array().unwrap().len(), 2);
    let comparison = &body["comparison"];
    assert_eq!(comparison["scenario_ids"], json!(["s1", "s2"]));
    for target in comparison["targets"].as_array().unwrap() {
        assert_eq!(target["deltas"][0], 0.0);
        let p: Vec<f64> = serde_json::from_value(target["probabilities"].clone()).unwrap();
        assert_eq!(target["deltas"][1].as_f64().unwrap(), p[1] - p[0]);
    }
    let (_, body) = call(&app, "GET", "/api/scenarios?base=ghost", None).await;
    assert_eq!(body["scenarios"], json!([]));
    assert_eq!(body["comparison"], Value::Null);
}

#[tokio::test]
async fn concurrent_edits_to_one_scenario_all_land() {
    let (app, state) = app();
    let sample = state.engine.as_ref().unwrap().samples[0].clone();
    call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": sample.patient_id() }))).await;
    let app = Arc::new(app);
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let app = app.clone();
            let t = sample.input.prediction_time - 0.1 - 0.01 * i as f64;
            tokio::spawn(async move { call(&app, "POST", "/api/scenarios/s1/edits", Some(json!({ "kind": "add", "code": "T001", "timestamp": t }))).await.0 })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), StatusCode::OK);
    }
    let (_, body) = call(&app, "GET", "/api/scenarios/s1", None).await;
    assert_eq!(body["scenario"]["edits"].as_array().unwrap().len(), 8);
}

#[tokio::test]
async fn scenario_log_is_replayed_on_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scenarios.jsonl");
    let e = engine();
    let sample = e.samples[3].clone();
    let before = {
        let store = ScenarioStore::open(&path, Some(&e)).unwrap();
        store.create(&e, sample.patient_id(), Some("a".into())).unwrap();
        store.create(&e, sample.patient_id(), None).unwrap();
        let op = clinrisk_core::whatif::EditOp::Add { code: "T002".into(), timestamp: sample.input.prediction_time - 0.25 };
        store.edit(&e, "s2", op).unwrap();
        assert!(store.edit(&e, "s2", clinrisk_core::whatif::EditOp::AdjustDuration { step: 0, gap_days: 3.0 }).is_err());
        store.list(None)
    };
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);

    let (app, _) = app_with(ScenarioStore::open(&path, Some(&e)).unwrap());
    let (_, body) = call(&app, "GET", "/api/scenarios", None).await;
    let after: Vec<clinrisk_core::Scenario> = serde_json::from_value(body["scenarios"].clone()).unwrap();
    assert_eq!(after, before);
    let (_, body) = call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": sample.patient_id() }))).await;
    assert_eq!(body["scenario"]["scenario_id"], "s3");
}

#[tokio::test]
async fn significance_matrix_covers_groups_and_targets() {
    let (app, state) = app();
    let id = first_patient(&state);
    let (status, body) = call(&app, "POST", "/api/significance", Some(json!({ "patient_id": id, "n_groups": 3, "k": 80 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["cohort_size"], 80);
    assert_eq!(body["mode"], "predicted");
    let groups = body["groups"].as_array().unwrap();
    assert_eq!(groups.len(), 3);
    let cells = body["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 3 * 3);
    for c in cells {
        assert_eq!(c["with"]["n"].as_u64().unwrap() + c["without"]["n"].as_u64().unwrap(), 80);
        if let Some(p) = c["p_value"].as_f64() {
            assert!((0.0..=1.0).contains(&p));
            assert_eq!(c["significant"], p < 0.05);
        } else {
            assert_eq!(c["insufficient"], true);
        }
    }

    let (status, body) = call(&app, "POST", "/api/significance", Some(json!({ "patient_id": id, "mode": "observed", "targets": ["D001"], "k": 80 }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(body["cells"].as_array().unwrap().iter().all(|c| c["target"] == "D001"));
    let (status, body) = call(&app, "POST", "/api/significance", Some(json!({ "patient_id": id, "n_groups": 50 }))).await;
    assert_error(status, &body, StatusCode::UNPROCESSABLE_ENTITY, "invalid_request");
}

#[tokio::test]
async fn diseases_are_served_without_an_engine() {
    let state = AppState::new(None, DiseaseCatalog::parse(DESCRIPTIONS).unwrap(), ScenarioStore::in_memory());
    let app = router(state);
    let (status, body) = call(&app, "GET", "/api/diseases/D001", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["found"], true);
    assert_eq!(body["name"], "Anemia");
    assert_eq!(body["sections"].as_object().unwrap().len(), 6);
    let (status, body) = call(&app, "GET", "/api/diseases/D777", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["found"], false);

    for (method, uri, payload) in [
        ("GET", "/api/patients", None),
        ("GET", "/api/meta", None),
        ("POST", "/api/predict", Some(json!({ "patient_id": "p" }))),
        ("POST", "/api/scenarios", Some(json!({ "base_patient_id": "p" }))),
    ] {
        let (status, body) = call(&app, method, uri, payload).await;
        assert_error(status, &body, StatusCode::SERVICE_UNAVAILABLE, "engine_not_loaded");
    }
}

#[tokio::test]
async fn published_schema_is_served_and_complete() {
    let (app, _) = app();
    let (status, body) = call(&app, "GET", "/api/schema", None).await;
    assert_eq!(status, StatusCode::OK);
    let defs = body["$defs"].as_object().unwrap();
    for kind in [
        "error_response",
        "meta_response",
        "patient_page_response",
        "patient_response",
        "predict_response",
        "similar_response",
        "aggregate_response",
        "scenario_response",
        "scenario_list_response",
        "significance_response",
        "disease_response",
    ] {
        assert!(defs.contains_key(kind), "{kind}");
        assert!(jsonschema::validator_for(&response_schema(kind).unwrap()).is_ok(), "{kind}");
    }
    assert!(response_schema("nonsense").is_none());
}

#[tokio::test]
async fn schema_rejects_a_tampered_response() {
    let (app, state) = app();
    let id = first_patient(&state);
    let (_, mut body) = call(&app, "POST", "/api/predict", Some(json!({ "patient_id": id }))).await;
    body["prediction"]["probabilities"][0] = json!(1.5);
    let schema = jsonschema::validator_for(&response_schema("predict_response").unwrap()).unwrap();
    assert!(!schema.is_valid(&body));
    body["prediction"]["probabilities"][0] = json!(0.5);
    assert!(schema.is_valid(&body));
    body.as_object_mut().unwrap().remove("schema_version");
    assert!(!schema.is_valid(&body));
}

#[tokio::test]
async fn scenario_fetch_replays_every_edit_kind() {
    let (app, state) = app();
    let sample = state.engine.as_ref().unwrap().samples[7].clone();
    let pt = sample.input.prediction_time;
    call(&app, "POST", "/api/scenarios", Some(json!({ "base_patient_id": sample.patient_id() }))).await;
    let first_code = sample.input.steps[0].codes.iter().next().unwrap().clone();
    let mut latest = Value::Null;
    for edit in [
        json!({ "kind": "add", "code": "T003", "timestamp": pt - 0.5 }),
        json!({ "kind": "adjust_duration", "step": 1, "gap_days": 1.0 }),
        json!({ "kind": "move", "from_step": 0, "code": first_code, "to_timestamp": pt - 0.25 }),
    ] {
        let (status, body) = call(&app, "POST", "/api/scenarios/s1/edits", Some(edit)).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        latest = body["scenario"].clone();
    }
    let steps: Vec<clinrisk_core::ehr::Step> = serde_json::from_value(latest["edited_sequence"]["steps"].clone()).unwrap();
    let at = steps.iter().position(|s| s.codes.contains("T003")).unwrap();
    let (status, body) = call(&app, "POST", "/api/scenarios/s1/edits", Some(json!({ "kind": "remove", "step": at, "code": "T003" }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    latest = body["scenario"].clone();
    assert_eq!(latest["edits"].as_array().unwrap().len(), 4);

    let (_, fetched) = call(&app, "GET", "/api/scenarios/s1", None).await;
    assert_eq!(fetched["scenario"], latest);
}
