use std::collections::{BTreeMap, BTreeSet, HashSet};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use clinrisk_core::ehr::{encode, EventKind, EventSequence, TrainingSample};
use clinrisk_core::retain::EventInfluence;
use clinrisk_core::similarity::{query_by_key_events, similar_patients, split_and_aggregate, KeyEvent, SimilarPatient, DEFAULT_HISTOGRAM_BINS};
use clinrisk_core::train::top_k;
use clinrisk_core::whatif::{cluster_treatments, compare_scenarios, outcome_values, significance_matrix, EditOp, OutcomeMode};
use clinrisk_core::{Prediction, Scenario};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::engine::Engine;
use crate::error::ApiError;
use crate::{AppState, SCHEMA_VERSION};

pub const DEFAULT_PER_PAGE: usize = 50;
pub const MAX_PER_PAGE: usize = 500;
pub const DEFAULT_PREVALENCE_K: usize = 20;
pub const DEFAULT_SIMILAR_K: usize = 20;
pub const DEFAULT_STAGES: usize = 3;
pub const DEFAULT_SIGNIFICANCE_K: usize = 200;
pub const DEFAULT_MAX_GROUPS: usize = 8;

type ApiResult = Result<Response, ApiError>;

/// Serializes `value` and stamps `schema_version` into the top-level object.
fn respond<T: Serialize>(status: StatusCode, value: T) -> ApiResult {
    let mut body = serde_json::to_value(value).map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()))?;
    if let Value::Object(map) = &mut body {
        map.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    Ok((status, Json(body)).into_response())
}

fn ok<T: Serialize>(value: T) -> ApiResult {
    respond(StatusCode::OK, value)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::malformed(e.body_text()))
}

fn query<T>(payload: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    payload.map(|Query(v)| v).map_err(|e| ApiError::malformed(e.body_text()))
}

fn engine(state: &AppState) -> Result<&Engine, ApiError> {
    state.engine.as_deref().ok_or_else(ApiError::not_loaded)
}

fn patient<'a>(engine: &'a Engine, id: &str) -> Result<&'a TrainingSample, ApiError> {
    engine.patient(id).ok_or_else(|| ApiError::patient_not_found(id))
}

/// Model-order indices of `requested`, or every target when absent.
fn target_columns(engine: &Engine, requested: Option<&[String]>) -> Result<Vec<usize>, ApiError> {
    match requested {
        None => Ok((0..engine.model.n_targets()).collect()),
        Some(codes) => codes
            .iter()
            .map(|c| {
                engine.model.target_index(c).ok_or_else(|| {
                    ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_target", format!("{c:?} is not a model target"))
                        .with_detail(json!({ "code": c }))
                })
            })
            .collect(),
    }
}

/// Nearest cohort members to `focal`, without the focal patient itself.
fn neighbours(engine: &Engine, focal: &EventSequence, bins: usize) -> Result<(Vec<SimilarPatient<f64>>, Vec<f64>), ApiError> {
    let result = similar_patients(&focal.steps, &engine.samples, &engine.vectors, bins.max(1), None)?;
    let ranked: Vec<_> = result.ranked.into_iter().filter(|r| r.patient_id != focal.patient_id).collect();
    let distances = ranked.iter().map(|r| r.distance).collect();
    Ok((ranked, distances))
}

pub async fn schema() -> ApiResult {
    let doc: Value = serde_json::from_str(crate::API_SCHEMA).expect("bundled schema parses");
    ok(doc)
}

#[derive(Debug, Serialize)]
struct MetaResponse<'a> {
    n_patients: usize,
    vocabulary_size: usize,
    vocabulary_fingerprint: String,
    targets: Vec<CodeInfo<'a>>,
    treatments: Vec<&'a str>,
}

pub async fn meta(State(state): State<AppState>) -> ApiResult {
    let engine = engine(&state)?;
    ok(MetaResponse {
        n_patients: engine.samples.len(),
        vocabulary_size: engine.vocabulary.len(),
        vocabulary_fingerprint: engine.vocabulary.fingerprint(),
        targets: engine.model.target_codes.iter().map(|c| code_info(engine, c)).collect(),
        treatments: engine.vocabulary.codes_of_kind(EventKind::Treatment).collect(),
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PageQuery {
    page: Option<usize>,
    per_page: Option<usize>,
}

#[derive(Debug, Serialize)]
struct PatientSummary<'a> {
    patient_id: &'a str,
    event_count: usize,
    step_count: usize,
    span: Option<(f64, f64)>,
    prediction_time: f64,
}

pub async fn list_patients(State(state): State<AppState>, params: Result<Query<PageQuery>, QueryRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let params = query(params)?;
    let page = params.page.unwrap_or(1);
    let per_page = params.per_page.unwrap_or(DEFAULT_PER_PAGE);
    if page == 0 {
        return Err(ApiError::invalid_request("page is 1-based"));
    }
    if per_page == 0 || per_page > MAX_PER_PAGE {
        return Err(ApiError::invalid_request(format!("per_page must lie in 1..={MAX_PER_PAGE}")));
    }
    let patients: Vec<_> = engine
        .samples
        .iter()
        .skip((page - 1).saturating_mul(per_page))
        .take(per_page)
        .map(|s| PatientSummary {
            patient_id: s.patient_id(),
            event_count: s.input.event_count(),
            step_count: s.input.len(),
            span: s.input.span(),
            prediction_time: s.input.prediction_time,
        })
        .collect();
    ok(json!({ "page": page, "per_page": per_page, "total": engine.samples.len(), "patients": patients }))
}

#[derive(Debug, Serialize)]
struct CodeInfo<'a> {
    code: &'a str,
    kind: Option<EventKind>,
    display_name: Option<&'a str>,
}

fn code_info<'a>(engine: &'a Engine, code: &'a str) -> CodeInfo<'a> {
    let entry = engine.vocabulary.get(code);
    CodeInfo { code, kind: entry.map(|e| e.kind), display_name: entry.map(|e| e.display_name.as_str()) }
}

pub async fn get_patient(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let engine = engine(&state)?;
    let sample = patient(engine, &id)?;
    let codes: BTreeSet<&str> = sample.input.steps.iter().flat_map(|s| s.codes.iter()).chain(&sample.labels).map(String::as_str).collect();
    let codes: Vec<_> = codes.into_iter().map(|c| code_info(engine, c)).collect();
    ok(json!({ "patient": sample, "codes": codes }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictRequest {
    #[serde(default)]
    patient_id: Option<String>,
    #[serde(default)]
    sequence: Option<EventSequence>,
    #[serde(default)]
    targets: Option<Vec<String>>,
    #[serde(default)]
    k: Option<usize>,
}

#[derive(Debug, Serialize)]
struct PredictResponse {
    prediction: Prediction,
    /// Selected targets, most probable first.
    ranking: Vec<String>,
    /// Share of the `k` nearest patients carrying each selected target.
    prevalence: BTreeMap<String, f64>,
    similar: Vec<SimilarPatient<f64>>,
}

/// Restricts a prediction to the given target columns.
fn select_targets(p: Prediction, columns: &[usize]) -> Prediction {
    let pick = |v: &[f64]| columns.iter().map(|&c| v[c]).collect::<Vec<_>>();
    Prediction {
        target_codes: columns.iter().map(|&c| p.target_codes[c].clone()).collect(),
        probabilities: pick(&p.probabilities),
        logits: pick(&p.logits),
        influence: p
            .influence
            .iter()
            .map(|e| EventInfluence { step: e.step, code_index: e.code_index, per_target: pick(&e.per_target) })
            .collect(),
        alphas: p.alphas,
        betas: p.betas,
    }
}

pub async fn predict(State(state): State<AppState>, payload: Result<Json<PredictRequest>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let req = body(payload)?;
    let focal = match (req.patient_id, req.sequence) {
        (Some(id), None) => patient(engine, &id)?.input.clone(),
        (None, Some(seq)) => {
            seq.validate()?;
            seq
        }
        _ => return Err(ApiError::invalid_request("give exactly one of patient_id and sequence")),
    };
    let columns = target_columns(engine, req.targets.as_deref())?;
    let k = req.k.unwrap_or(DEFAULT_PREVALENCE_K);
    if k == 0 {
        return Err(ApiError::invalid_request("k must be at least 1"));
    }
    let prediction = select_targets(engine.model.forward(&encode(&focal, &engine.vocabulary)?)?, &columns);
    let ranking = top_k(&prediction.probabilities, prediction.probabilities.len()).into_iter().map(|i| prediction.target_codes[i].clone()).collect();

    let (ranked, _) = neighbours(engine, &focal, DEFAULT_HISTOGRAM_BINS)?;
    let similar: Vec<_> = ranked.into_iter().take(k).collect();
    let prevalence = prediction
        .target_codes
        .iter()
        .map(|code| {
            let carriers = similar.iter().filter(|r| engine.samples[r.index].labels.contains(code)).count();
            let share = if similar.is_empty() { 0.0 } else { carriers as f64 / similar.len() as f64 };
            (code.clone(), share)
        })
        .collect();
    ok(PredictResponse { prediction, ranking, prevalence, similar })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarRequest {
    patient_id: String,
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    distance_range: Option<(f64, f64)>,
    #[serde(default)]
    key_events: Option<Vec<KeyEvent>>,
    #[serde(default)]
    bins: Option<usize>,
}

#[derive(Debug, Serialize)]
struct SimilarEntry<'a> {
    patient_id: &'a str,
    distance: f64,
    event_count: usize,
    labels: &'a BTreeSet<String>,
}

pub async fn similar(State(state): State<AppState>, payload: Result<Json<SimilarRequest>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let req = body(payload)?;
    let focal = patient(engine, &req.patient_id)?;
    let k = req.k.unwrap_or(DEFAULT_SIMILAR_K);
    let bins = req.bins.unwrap_or(DEFAULT_HISTOGRAM_BINS);
    if k == 0 || bins == 0 {
        return Err(ApiError::invalid_request("k and bins must be at least 1"));
    }
    if let Some((lo, hi)) = req.distance_range {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(ApiError::invalid_request("distance_range must be finite with lo <= hi"));
        }
    }
    let (ranked, distances) = neighbours(engine, &focal.input, bins)?;
    let histogram = clinrisk_core::similarity::Histogram::build(&distances, bins)?;

    let mut warnings = Vec::new();
    let allowed: Option<HashSet<usize>> = req.key_events.as_ref().filter(|k| !k.is_empty()).map(|required| {
        if let Some(unknown) = required.iter().find(|k| !engine.vocabulary.contains(&k.code)) {
            warnings.push(format!("key event code {:?} is not in the vocabulary", unknown.code));
        }
        query_by_key_events(&engine.samples, required, |c| engine.vocabulary.contains(c)).into_iter().collect()
    });
    let matched: Vec<_> = ranked
        .iter()
        .filter(|r| allowed.as_ref().is_none_or(|a| a.contains(&r.index)))
        .filter(|r| req.distance_range.is_none_or(|(lo, hi)| r.distance >= lo && r.distance <= hi))
        .collect();
    let patients: Vec<_> = matched
        .iter()
        .take(k)
        .map(|r| {
            let s = &engine.samples[r.index];
            SimilarEntry { patient_id: s.patient_id(), distance: r.distance, event_count: s.input.event_count(), labels: &s.labels }
        })
        .collect();
    ok(json!({
        "patient_id": req.patient_id,
        "scored": ranked.len(),
        "matched": matched.len(),
        "patients": patients,
        "histogram": histogram,
        "warnings": warnings,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRequest {
    patient_id: String,
    selection: Vec<String>,
    #[serde(default)]
    n_stages: Option<usize>,
}

pub async fn aggregate(State(state): State<AppState>, payload: Result<Json<AggregateRequest>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let req = body(payload)?;
    let focal = patient(engine, &req.patient_id)?;
    let selection = req.selection.iter().map(|id| patient(engine, id)).collect::<Result<Vec<_>, _>>()?;
    let aggregation = split_and_aggregate(&focal.input.steps, &selection, &engine.vectors, req.n_stages.unwrap_or(DEFAULT_STAGES))?;
    ok(aggregation)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateScenarioRequest {
    base_patient_id: String,
    #[serde(default)]
    label: Option<String>,
}

pub async fn create_scenario(State(state): State<AppState>, payload: Result<Json<CreateScenarioRequest>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let req = body(payload)?;
    let scenario = state.scenarios.create(engine, &req.base_patient_id, req.label)?;
    respond(StatusCode::CREATED, json!({ "scenario": scenario }))
}

pub async fn edit_scenario(State(state): State<AppState>, Path(id): Path<String>, payload: Result<Json<EditOp>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let op = body(payload)?;
    let scenario = state.scenarios.edit(engine, &id, op)?;
    ok(json!({ "scenario": scenario }))
}

pub async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    engine(&state)?;
    ok(json!({ "scenario": state.scenarios.scenario(&id)? }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioQuery {
    base: Option<String>,
}

pub async fn list_scenarios(State(state): State<AppState>, params: Result<Query<ScenarioQuery>, QueryRejection>) -> ApiResult {
    engine(&state)?;
    let params = query(params)?;
    let scenarios: Vec<Scenario> = state.scenarios.list(params.base.as_deref());
    let comparison = if scenarios.is_empty() { None } else { Some(compare_scenarios(&scenarios)?) };
    ok(json!({ "scenarios": scenarios, "comparison": comparison }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignificanceRequest {
    patient_id: String,
    #[serde(default)]
    targets: Option<Vec<String>>,
    #[serde(default)]
    n_groups: Option<usize>,
    #[serde(default)]
    mode: OutcomeMode,
    #[serde(default)]
    k: Option<usize>,
}

pub async fn significance(State(state): State<AppState>, payload: Result<Json<SignificanceRequest>, JsonRejection>) -> ApiResult {
    let engine = engine(&state)?;
    let req = body(payload)?;
    let focal = patient(engine, &req.patient_id)?;
    let columns = target_columns(engine, req.targets.as_deref())?;
    let targets: Vec<String> = columns.iter().map(|&c| engine.model.target_codes[c].clone()).collect();
    let k = req.k.unwrap_or(DEFAULT_SIGNIFICANCE_K);
    if k < 2 {
        return Err(ApiError::invalid_request("k must be at least 2"));
    }
    let (ranked, _) = neighbours(engine, &focal.input, DEFAULT_HISTOGRAM_BINS)?;
    let cohort: Vec<&TrainingSample> = ranked.iter().take(k).map(|r| &engine.samples[r.index]).collect();

    let treatments: Vec<String> = cohort
        .iter()
        .flat_map(|s| s.input.steps.iter().flat_map(|st| st.codes.iter()))
        .filter(|c| engine.vocabulary.kind_of(c) == Some(EventKind::Treatment))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (groups, cells) = if treatments.is_empty() || cohort.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        let n_groups = req.n_groups.unwrap_or(DEFAULT_MAX_GROUPS.min(treatments.len()));
        let groups = cluster_treatments(&treatments, &engine.vectors, n_groups)?;
        let values = outcome_values(req.mode, &cohort, &targets, &engine.model, &engine.vocabulary)?;
        let cells = significance_matrix(&cohort, &groups, &targets, &values)?;
        (groups, cells)
    };
    ok(json!({
        "patient_id": req.patient_id,
        "cohort_size": cohort.len(),
        "mode": req.mode,
        "targets": targets,
        "groups": groups,
        "cells": cells,
    }))
}

pub async fn disease(State(state): State<AppState>, Path(code): Path<String>) -> ApiResult {
    ok(state.diseases.lookup(&code))
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}
