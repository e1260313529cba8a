//! HTTP endpoints. Every JSON body carries `schema_version`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tfv_core::clustering::{cluster, ClusteringParams, NOISE};
use tfv_core::projection::{import_from_reader, projection_id, ProjectionMethod, ProjectionSpec};
use tfv_core::trajectory::{build_all, build_trajectory, dissimilarity_matrix, top_k_similar, DEFAULT_TOP_K};
use tfv_core::{fit_pca_2d, ClusterModel, Dataset, FrameKey, Interval, ProjectionResult};
use tfv_reports::annotation::ClusterKey;
use tfv_reports::vlm::media_type;
use tfv_reports::{detect_transitions, LatentView, Report, DEFAULT_CONTEXT_K};
use tower_http::services::{ServeDir, ServeFile};
use tower_http::trace::TraceLayer;

use crate::error::ApiError;
use crate::jobs::{JobHandle, JobKind, JobStatus};
use crate::state::{AppState, SimilarityMatrix};
use crate::SCHEMA_VERSION;

type Shared = State<Arc<AppState>>;
type ApiResult = Result<Response, ApiError>;

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/health", get(health))
        .route("/cases", get(cases))
        .route("/projection", post(submit_projection))
        .route("/projection/{id}", get(get_projection))
        .route("/jobs/{id}", get(get_job))
        .route("/clustering", post(submit_clustering))
        .route("/clustering/{id}", get(get_clustering))
        .route("/trajectory/{projection_id}/{case_id}", get(trajectory))
        .route("/similar/{projection_id}/{case_id}", get(similar))
        .route("/similarity", post(submit_similarity))
        .route("/similarity/{id}", get(get_similarity))
        .route("/frames/{case_id}", get(frames))
        .route("/image/{case_id}/{channel}/{t_index}", get(image))
        .route("/annotations/{clustering_id}", get(list_annotations))
        .route(
            "/annotation/{clustering_id}/{cluster_id}",
            put(save_annotation).get(get_annotation),
        )
        .route("/transitions/{clustering_id}/{case_id}", get(transitions))
        .route("/report/frame", post(frame_report))
        .route("/report/case", post(case_report))
        .route("/report/transition", post(transition_report))
        .route("/report/{id}", get(get_report).put(edit_report))
        .route("/report/{id}/prompt", get(report_prompt))
        .fallback(api_not_found)
        .with_state(state);

    let app = Router::new().nest("/api", api);
    let app = match static_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => app.fallback(api_not_found),
    };
    app.layer(TraceLayer::new_for_http())
}

fn versioned(value: impl Serialize) -> Value {
    let mut v = serde_json::to_value(value).expect("response serialises");
    if let Value::Object(map) = &mut v {
        map.insert("schema_version".into(), SCHEMA_VERSION.into());
    }
    v
}

fn reply(status: StatusCode, value: impl Serialize) -> ApiResult {
    Ok((status, Json(versioned(value))).into_response())
}

fn ok(value: impl Serialize) -> ApiResult {
    reply(StatusCode::OK, value)
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request("malformed_body", e.body_text()))
}

fn query(q: Result<Query<HashMap<String, String>>, QueryRejection>) -> Result<HashMap<String, String>, ApiError> {
    q.map(|Query(m)| m)
        .map_err(|e| ApiError::bad_request("malformed_query", e.body_text()))
}

fn parse_param<T: std::str::FromStr>(name: &str, raw: &str) -> Result<T, ApiError> {
    raw.trim()
        .parse()
        .map_err(|_| ApiError::bad_request("invalid_parameter", format!("{name}: cannot parse {raw:?}")))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no_route", "no such endpoint")
}

async fn health(State(st): Shared) -> ApiResult {
    ok(json!({
        "status": "ok",
        "dataset_name": st.dataset.name(),
        "n_cases": st.dataset.n_cases(),
        "channels": st.dataset.channels(),
        "fingerprint": st.dataset.fingerprint(),
        "vlm_model": st.engine.vlm().model_id(),
    }))
}

fn bound(q: &HashMap<String, String>, min: &str, max: &str) -> Result<Interval, ApiError> {
    let get = |k: &str| match q.get(k).map(|v| v.trim()).filter(|v| !v.is_empty()) {
        Some(v) => parse_param::<f64>(k, v).map(Some),
        None => Ok(None),
    };
    Ok(Interval {
        min: get(min)?,
        max: get(max)?,
    })
}

async fn cases(State(st): Shared, q: Result<Query<HashMap<String, String>>, QueryRejection>) -> ApiResult {
    let q = query(q)?;
    let p = bound(&q, "p_min", "p_max")?;
    let t = bound(&q, "t_min", "t_max")?;
    let h = bound(&q, "h2o_min", "h2o_max")?;
    let ids = st.dataset.filter_cases(p, t, h)?;
    let rows: Vec<Value> = ids
        .iter()
        .filter_map(|id| st.dataset.case(id))
        .map(|c| {
            let counts: HashMap<&str, usize> = c.channels.keys().map(|ch| (ch.as_str(), c.frame_count(ch))).collect();
            json!({ "case_id": c.case_id, "params": c.params, "frame_counts": counts })
        })
        .collect();
    ok(json!({
        "filter": { "p": p, "t": t, "h2o": h },
        "n_cases": rows.len(),
        "cases": rows,
    }))
}

#[derive(Debug, Deserialize)]
struct ProjectionRequest {
    channel: String,
    case_ids: Vec<String>,
    #[serde(default = "default_method")]
    method: String,
    external_file: Option<PathBuf>,
}

fn default_method() -> String {
    "pca".into()
}

fn projection_spec(ds: &Dataset, req: ProjectionRequest) -> Result<ProjectionSpec, ApiError> {
    if !ds.channels().contains(&req.channel) {
        return Err(ApiError::bad_request("unknown_channel", format!("no channel {:?}", req.channel)));
    }
    if req.case_ids.is_empty() {
        return Err(ApiError::bad_request("empty_scope", "case_ids is empty"));
    }
    if let Some(missing) = req.case_ids.iter().find(|id| ds.case(id).is_none()) {
        return Err(ApiError::not_found("unknown_case", format!("no case {missing}")));
    }
    let external = |file: Option<PathBuf>| {
        let file = file.ok_or_else(|| ApiError::bad_request("missing_external_file", "external_file is required"))?;
        Ok::<_, ApiError>(if file.is_relative() { ds.root().join(file) } else { file })
    };
    match req.method.to_ascii_lowercase().as_str() {
        "pca" if req.external_file.is_some() => Err(ApiError::bad_request(
            "invalid_parameter",
            "external_file is only valid for imported projections",
        )),
        "pca" => Ok(ProjectionSpec::pca(req.channel, req.case_ids)),
        "external" => Ok(ProjectionSpec::external(req.channel, req.case_ids, external(req.external_file)?)),
        "umap" => Ok(ProjectionSpec::external(req.channel, req.case_ids, external(req.external_file)?).with_umap_params()),
        "tsne" => {
            let mut spec = ProjectionSpec::external(req.channel, req.case_ids, external(req.external_file)?);
            spec.method_params.insert("method".into(), "tsne".into());
            Ok(spec)
        }
        other => Err(ApiError::bad_request("unknown_method", format!("unknown projection method {other:?}"))),
    }
}

pub fn compute_projection(ds: &Dataset, spec: &ProjectionSpec) -> Result<ProjectionResult, ApiError> {
    match spec.method {
        ProjectionMethod::Pca => Ok(fit_pca_2d(ds, &spec.channel, &spec.scope)?),
        ProjectionMethod::External => {
            let path = spec.external_file.as_deref().unwrap_or(Path::new(""));
            let file = fs::File::open(path).map_err(|e| {
                ApiError::bad_request("external_file_unreadable", format!("{}: {e}", path.display()))
            })?;
            Ok(import_from_reader(ds, spec.clone(), file)?)
        }
    }
}

fn job_reply(handle: JobHandle) -> ApiResult {
    let status = match handle.status {
        JobStatus::Done | JobStatus::Failed => StatusCode::OK,
        _ => StatusCode::ACCEPTED,
    };
    reply(status, handle)
}

/// Runs `work` on the bounded pool as job `id` unless it is already known.
fn spawn_job<T, F, S>(st: &Arc<AppState>, id: &str, kind: JobKind, work: F, store: S) -> JobHandle
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
    S: FnOnce(&AppState, T) -> Result<(), ApiError> + Send + 'static,
{
    let (handle, fresh) = st.jobs.submit(id, kind);
    if !fresh {
        return handle;
    }
    let st = st.clone();
    let id = id.to_string();
    tokio::spawn(async move {
        let _permit = st.pool.clone().acquire_owned().await;
        st.jobs.start(&id);
        tracing::info!(job = %id, ?kind, "job started");
        let worker = st.clone();
        let outcome = blocking(move || {
            let value = work(&worker)?;
            store(&worker, value)
        })
        .await;
        match outcome {
            Ok(()) => {
                tracing::info!(job = %id, "job done");
                st.jobs.finish(&id, &id);
            }
            Err(e) => {
                tracing::warn!(job = %id, code = %e.code, message = %e.message, "job failed");
                st.jobs.fail(&id, &e);
            }
        }
    });
    handle
}

async fn submit_projection(State(st): Shared, payload: Result<Json<ProjectionRequest>, JsonRejection>) -> ApiResult {
    let spec = projection_spec(&st.dataset, body(payload)?)?;
    let id = projection_id(&st.dataset, &spec)?;
    if st.projections.get(&id).is_some() {
        return job_reply(st.jobs.record_done(&id, JobKind::Projection, &id));
    }
    let key = id.clone();
    let handle = spawn_job(
        &st,
        &id,
        JobKind::Projection,
        move |s| compute_projection(&s.dataset, &spec),
        move |s, p| s.projections.insert(&key, p).map(drop),
    );
    job_reply(handle)
}

fn projection_body(id: &str, p: &ProjectionResult) -> Value {
    let points: Vec<Value> = p
        .coords
        .iter()
        .map(|(k, [x, y])| json!({ "case_id": k.case_id, "t_index": k.t_index, "x": x, "y": y }))
        .collect();
    json!({
        "projection_id": id,
        "spec": p.spec,
        "degenerate": p.degenerate,
        "fit_stats": p.fit_stats,
        "points": points,
    })
}

async fn get_projection(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    if let Some(p) = st.projections.get(&id) {
        return ok(projection_body(&id, &p));
    }
    match st.jobs.get(&id) {
        Some(job) if job.status == JobStatus::Failed => Err(job.error.expect("failed jobs carry an error").to_error()),
        Some(job) => reply(StatusCode::ACCEPTED, job),
        None => Err(ApiError::not_found("unknown_projection", format!("no projection {id}"))),
    }
}

async fn get_job(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    if let Some(job) = st.jobs.get(&id) {
        return ok(job);
    }
    // results computed by an earlier process
    if st.projections.get(&id).is_some() {
        return ok(JobHandle::done(&id, JobKind::Projection, &id));
    }
    if st.similarities.get(&id).is_some() {
        return ok(JobHandle::done(&id, JobKind::Similarity, &id));
    }
    Err(ApiError::not_found("unknown_job", format!("no job {id}")))
}

#[derive(Debug, Deserialize)]
struct ClusteringRequest {
    projection_id: String,
    eps: f64,
    min_samples: usize,
}

fn clustering_body(id: &str, m: &ClusterModel) -> Value {
    let labels: Vec<Value> = m
        .labels
        .iter()
        .map(|(k, l)| json!({ "case_id": k.case_id, "t_index": k.t_index, "label": l }))
        .collect();
    json!({
        "clustering_id": id,
        "params": m.params,
        "n_clusters": m.n_clusters(),
        "n_noise": m.labels.values().filter(|l| **l == NOISE).count(),
        "labels": labels,
        "centroids": m.centroids,
    })
}

async fn submit_clustering(State(st): Shared, payload: Result<Json<ClusteringRequest>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    let projection = st.projection(&req.projection_id)?;
    let params = ClusteringParams {
        eps: req.eps,
        min_samples: req.min_samples,
        projection_id: req.projection_id,
    };
    params.validate()?;
    let id = params.clustering_id();
    if let Some(m) = st.clusterings.get(&id) {
        return ok(clustering_body(&id, &m));
    }
    let model = blocking(move || Ok(cluster(&projection, params)?)).await?;
    let model = st.clusterings.insert(&id, model)?;
    tracing::info!(clustering = %id, clusters = model.n_clusters(), "clustering computed");
    ok(clustering_body(&id, &model))
}

async fn get_clustering(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let m = st.clustering(&id)?;
    ok(clustering_body(&id, &m))
}

async fn trajectory(State(st): Shared, UrlPath((pid, case_id)): UrlPath<(String, String)>) -> ApiResult {
    let p = st.projection(&pid)?;
    let traj = build_trajectory(&p, &case_id)?;
    ok(json!({ "projection_id": pid, "trajectory": traj }))
}

async fn similar(
    State(st): Shared,
    UrlPath((pid, case_id)): UrlPath<(String, String)>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let k = match q.get("k") {
        Some(v) => parse_param::<usize>("k", v)?,
        None => DEFAULT_TOP_K,
    };
    let p = st.projection(&pid)?;
    let case = case_id.clone();
    let (target, ranked) = blocking(move || {
        let target = build_trajectory(&p, &case)?;
        let ranked = top_k_similar(&p, &case, k)?;
        let with_traj = ranked
            .into_iter()
            .map(|s| {
                let t = build_trajectory(&p, &s.case_id)?;
                Ok(json!({ "case_id": s.case_id, "value": s.value, "trajectory": t }))
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        Ok((target, with_traj))
    })
    .await?;
    ok(json!({
        "projection_id": pid,
        "case_id": case_id,
        "k": k,
        "target": target,
        "similar": ranked,
    }))
}

#[derive(Debug, Deserialize)]
struct SimilarityRequest {
    projection_id: String,
}

pub fn similarity_id(projection_id: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"tfv-similarity-v1\0");
    h.update(projection_id.as_bytes());
    hex::encode(h.finalize())[..32].to_string()
}

async fn submit_similarity(State(st): Shared, payload: Result<Json<SimilarityRequest>, JsonRejection>) -> ApiResult {
    let req = body(payload)?;
    let projection = st.projection(&req.projection_id)?;
    let id = similarity_id(&req.projection_id);
    if st.similarities.get(&id).is_some() {
        return job_reply(st.jobs.record_done(&id, JobKind::Similarity, &id));
    }
    let key = id.clone();
    let pid = req.projection_id;
    let handle = spawn_job(
        &st,
        &id,
        JobKind::Similarity,
        move |_| {
            let (case_ids, values) = dissimilarity_matrix(&build_all(&projection));
            Ok(SimilarityMatrix {
                projection_id: pid,
                case_ids,
                values,
            })
        },
        move |s, m| s.similarities.insert(&key, m).map(drop),
    );
    job_reply(handle)
}

async fn get_similarity(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    if let Some(m) = st.similarities.get(&id) {
        return ok(json!({ "similarity_id": id, "matrix": *m }));
    }
    match st.jobs.get(&id) {
        Some(job) if job.status == JobStatus::Failed => Err(job.error.expect("failed jobs carry an error").to_error()),
        Some(job) => reply(StatusCode::ACCEPTED, job),
        None => Err(ApiError::not_found("unknown_similarity", format!("no similarity result {id}"))),
    }
}

async fn frames(
    State(st): Shared,
    UrlPath(case_id): UrlPath<String>,
    q: Result<Query<HashMap<String, String>>, QueryRejection>,
) -> ApiResult {
    let q = query(q)?;
    let case = st
        .dataset
        .case(&case_id)
        .ok_or_else(|| ApiError::not_found("unknown_case", format!("no case {case_id}")))?;
    let channel = match q.get("channel").filter(|c| !c.is_empty()) {
        Some(c) => c.clone(),
        None => case
            .channels
            .keys()
            .next()
            .cloned()
            .ok_or_else(|| ApiError::not_found("missing_channel", format!("case {case_id} has no channels")))?,
    };
    let data = case
        .channel(&channel)
        .ok_or_else(|| ApiError::not_found("missing_channel", format!("case {case_id} has no channel {channel}")))?;
    let frames: Vec<Value> = data
        .frames
        .iter()
        .map(|f| {
            json!({
                "t_index": f.t_index,
                "time_ms": f.time_ms,
                "image_url": format!("/api/image/{case_id}/{channel}/{}", f.t_index),
            })
        })
        .collect();
    ok(json!({ "case_id": case_id, "channel": channel, "frames": frames }))
}

async fn image(State(st): Shared, UrlPath((case_id, channel, t)): UrlPath<(String, String, String)>) -> ApiResult {
    let t: u32 = parse_param("t_index", &t)?;
    let path = st
        .dataset
        .image_path(&case_id, &channel, t)
        .ok_or_else(|| ApiError::not_found("unknown_frame", format!("no frame {case_id}@{t} [{channel}]")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::not_found("image_missing", format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, media_type(&path))], bytes).into_response())
}

#[derive(Debug, Deserialize)]
struct AnnotationRequest {
    text: String,
    #[serde(default)]
    author: Option<String>,
}

fn cluster_id_param(raw: &str) -> Result<i32, ApiError> {
    parse_param("cluster_id", raw)
}

async fn save_annotation(
    State(st): Shared,
    UrlPath((cid, cluster)): UrlPath<(String, String)>,
    payload: Result<Json<AnnotationRequest>, JsonRejection>,
) -> ApiResult {
    let cluster_id = cluster_id_param(&cluster)?;
    let req = body(payload)?;
    let model = st.clustering(&cid)?;
    if cluster_id == NOISE {
        return Err(ApiError::conflict("noise_cluster", "noise points cannot be annotated"));
    }
    let author = req.author.unwrap_or_else(|| "anonymous".into());
    let record = st.engine.annotations().save(&model, cluster_id, &req.text, &author)?;
    tracing::info!(clustering = %cid, cluster_id, version = record.version, "annotation saved");
    ok(json!({ "annotation": record }))
}

async fn get_annotation(State(st): Shared, UrlPath((cid, cluster)): UrlPath<(String, String)>) -> ApiResult {
    let cluster_id = cluster_id_param(&cluster)?;
    let key = ClusterKey::new(cid.clone(), cluster_id);
    let history = st.engine.annotations().history(&key);
    let latest = history
        .last()
        .ok_or_else(|| ApiError::not_found("no_annotation", format!("cluster {cluster_id} of {cid} is not annotated")))?;
    ok(json!({ "annotation": latest, "versions": history.len() }))
}

async fn list_annotations(State(st): Shared, UrlPath(cid): UrlPath<String>) -> ApiResult {
    let model = st.clustering(&cid)?;
    let annotations: Vec<_> = st.engine.annotations().for_model(&model).into_values().collect();
    ok(json!({ "clustering_id": cid, "annotations": annotations }))
}

async fn transitions(State(st): Shared, UrlPath((cid, case_id)): UrlPath<(String, String)>) -> ApiResult {
    let model = st.clustering(&cid)?;
    if model.case_labels(&case_id).is_empty() {
        return Err(ApiError::not_found("unknown_case", format!("case {case_id} is not part of clustering {cid}")));
    }
    ok(json!({
        "clustering_id": cid,
        "case_id": case_id,
        "transitions": detect_transitions(&model, &case_id),
    }))
}

#[derive(Debug, Deserialize)]
struct ReportRequest {
    clustering_id: String,
    case_id: String,
    #[serde(default)]
    t_index: Option<u32>,
    #[serde(default)]
    k: Option<usize>,
}

fn report_request<T: DeserializeOwned>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body(payload)
}

fn view_parts(st: &AppState, clustering_id: &str) -> Result<(Arc<ProjectionResult>, Arc<ClusterModel>), ApiError> {
    let model = st.clustering(clustering_id)?;
    let projection = st.projection(&model.params.projection_id)?;
    Ok((projection, model))
}

fn report_reply(st: &AppState, report: Report) -> ApiResult {
    let revision = st.engine.reports().revision_count(&report.report_id);
    ok(json!({ "report": report, "revision": revision }))
}

fn require_t(req: &ReportRequest) -> Result<u32, ApiError> {
    req.t_index
        .ok_or_else(|| ApiError::bad_request("missing_t_index", "t_index is required"))
}

async fn frame_report(State(st): Shared, payload: Result<Json<ReportRequest>, JsonRejection>) -> ApiResult {
    let req: ReportRequest = report_request(payload)?;
    let t = require_t(&req)?;
    let (projection, model) = view_parts(&st, &req.clustering_id)?;
    let view = LatentView {
        projection: &projection,
        model: &model,
    };
    let frame = FrameKey::new(req.case_id, t);
    let report = st
        .engine
        .generate_frame_report(view, &frame, req.k.unwrap_or(DEFAULT_CONTEXT_K))
        .await?;
    report_reply(&st, report)
}

async fn transition_report(State(st): Shared, payload: Result<Json<ReportRequest>, JsonRejection>) -> ApiResult {
    let req: ReportRequest = report_request(payload)?;
    let t = require_t(&req)?;
    let (projection, model) = view_parts(&st, &req.clustering_id)?;
    let transition = detect_transitions(&model, &req.case_id)
        .into_iter()
        .find(|tr| tr.t_index == t)
        .ok_or_else(|| {
            ApiError::not_found("unknown_transition", format!("case {} has no transition at t={t}", req.case_id))
        })?;
    let view = LatentView {
        projection: &projection,
        model: &model,
    };
    let report = st
        .engine
        .generate_transition_report(view, &req.case_id, &transition, req.k.unwrap_or(DEFAULT_CONTEXT_K))
        .await?;
    report_reply(&st, report)
}

async fn case_report(State(st): Shared, payload: Result<Json<ReportRequest>, JsonRejection>) -> ApiResult {
    let req: ReportRequest = report_request(payload)?;
    let (projection, model) = view_parts(&st, &req.clustering_id)?;
    let view = LatentView {
        projection: &projection,
        model: &model,
    };
    let report = st
        .engine
        .generate_case_summary(view, &req.case_id, req.k.unwrap_or(DEFAULT_CONTEXT_K))
        .await?;
    report_reply(&st, report)
}

fn stored_report(st: &AppState, id: &str) -> Result<Report, ApiError> {
    st.engine
        .reports()
        .get(id)
        .ok_or_else(|| ApiError::not_found("unknown_report", format!("no report {id}")))
}

async fn get_report(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let report = stored_report(&st, &id)?;
    report_reply(&st, report)
}

#[derive(Debug, Deserialize)]
struct EditRequest {
    text: String,
}

async fn edit_report(
    State(st): Shared,
    UrlPath(id): UrlPath<String>,
    payload: Result<Json<EditRequest>, JsonRejection>,
) -> ApiResult {
    let req = body(payload)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("empty_text", "report text is empty"));
    }
    let report = st
        .engine
        .reports()
        .edit(&id, &req.text)
        .map_err(|e| ApiError::internal(e.to_string()))?
        .ok_or_else(|| ApiError::not_found("unknown_report", format!("no report {id}")))?;
    report_reply(&st, report)
}

async fn report_prompt(State(st): Shared, UrlPath(id): UrlPath<String>) -> ApiResult {
    let report = stored_report(&st, &id)?;
    let prompt = st.engine.reassemble_prompt(&report)?;
    let digest = prompt.digest();
    ok(json!({
        "report_id": id,
        "prompt": prompt,
        "canonical": prompt.canonical(),
        "digest": digest,
        "matches_report": digest == report.prompt_digest,
    }))
}
