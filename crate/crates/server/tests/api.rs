mod common;

use axum::http::StatusCode;
use common::{Api, Workspace};
use serde_json::{json, Value};
use tfv_core::projection::projection_id;
use tfv_core::{fit_pca_2d, Dataset};
use tfv_reports::{Vlm, VlmConfig};

fn assert_error(r: &common::Reply, status: StatusCode, code: &str) {
    assert_eq!(r.status, status, "{}", String::from_utf8_lossy(&r.bytes));
    let body = r.json();
    assert_eq!(body["schema_version"], 1);
    assert_eq!(body["error"]["code"], code, "{body}");
    assert!(!body["error"]["message"].as_str().unwrap().is_empty());
}

async fn clustered(api: &Api) -> (String, Value) {
    let pid = api.project_all("pressure").await;
    let model = api.cluster(&pid, 0.8, 4).await;
    (pid, model)
}

#[tokio::test]
async fn health_reports_dataset() {
    let ws = Workspace::new("ten.json");
    let r = ws.app().get("/api/health").await;
    assert_eq!(r.status, StatusCode::OK);
    let body = r.json();
    assert_eq!(body["status"], "ok");
    assert_eq!(body["dataset_name"], "synthetic-ten");
    assert_eq!(body["n_cases"], 10);
    assert_eq!(body["schema_version"], 1);
}

#[tokio::test]
async fn case_filter_and_validation() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let all = api.get("/api/cases").await.json();
    assert_eq!(all["n_cases"], 10);
    let first = &all["cases"][0];
    assert_eq!(first["case_id"], "case_000");
    assert!(first["params"]["P_MPa"].is_number());
    assert!(first["frame_counts"]["pressure"].as_u64().unwrap() >= 12);

    let narrow = api.get("/api/cases?p_min=1.0&p_max=1.6").await.json();
    let n = narrow["n_cases"].as_u64().unwrap();
    assert!(n < 10);
    for c in narrow["cases"].as_array().unwrap() {
        let p = c["params"]["P_MPa"].as_f64().unwrap();
        assert!((1.0..=1.6).contains(&p));
    }

    assert_error(&api.get("/api/cases?p_min=2&p_max=1").await, StatusCode::BAD_REQUEST, "invalid_range");
    assert_error(&api.get("/api/cases?t_min=hot").await, StatusCode::BAD_REQUEST, "invalid_parameter");
}

#[tokio::test]
async fn projection_job_lifecycle() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let pid = api.project_all("pressure").await;

    // same id as computing it directly
    let ds = Dataset::load(&ws.manifest).unwrap();
    let scope: Vec<String> = ds.case_ids().map(String::from).collect();
    let direct = fit_pca_2d(&ds, "pressure", &scope).unwrap();
    assert_eq!(pid, projection_id(&ds, &direct.spec).unwrap());

    let body = api.get(&format!("/api/projection/{pid}")).await.json();
    let points = body["points"].as_array().unwrap();
    assert_eq!(points.len(), direct.len());
    let p0 = &points[0];
    let key = tfv_core::FrameKey::new(p0["case_id"].as_str().unwrap(), p0["t_index"].as_u64().unwrap() as u32);
    assert_eq!(direct.coord(&key).unwrap(), [p0["x"].as_f64().unwrap(), p0["y"].as_f64().unwrap()]);

    // resubmitting is answered from the cache
    let again = api
        .post("/api/projection", json!({ "channel": "pressure", "case_ids": scope, "method": "pca" }))
        .await;
    assert_eq!(again.status, StatusCode::OK);
    assert_eq!(again.json()["job_id"], pid.as_str());
    assert_eq!(again.json()["status"], "done");
}

#[tokio::test]
async fn projection_request_errors() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let post = |b: Value| {
        let api = api.clone();
        async move { api.post("/api/projection", b).await }
    };
    assert_error(
        &post(json!({ "channel": "pressure", "case_ids": [] })).await,
        StatusCode::BAD_REQUEST,
        "empty_scope",
    );
    assert_error(
        &post(json!({ "channel": "pressure", "case_ids": ["nope"] })).await,
        StatusCode::NOT_FOUND,
        "unknown_case",
    );
    assert_error(
        &post(json!({ "channel": "velocity", "case_ids": ["case_000"] })).await,
        StatusCode::BAD_REQUEST,
        "unknown_channel",
    );
    assert_error(
        &post(json!({ "channel": "pressure", "case_ids": ["case_000"], "method": "external" })).await,
        StatusCode::BAD_REQUEST,
        "missing_external_file",
    );
    assert_error(
        &post(json!({ "channel": "pressure", "case_ids": ["case_000"], "method": "spectral" })).await,
        StatusCode::BAD_REQUEST,
        "unknown_method",
    );
    assert_error(&post(json!({ "channel": 3 })).await, StatusCode::BAD_REQUEST, "malformed_body");
    assert_error(&api.get("/api/projection/abc123").await, StatusCode::NOT_FOUND, "unknown_projection");
    assert_error(&api.get("/api/jobs/abc123").await, StatusCode::NOT_FOUND, "unknown_job");
    assert_error(&api.get("/api/nothing/here").await, StatusCode::NOT_FOUND, "no_route");
}

#[tokio::test]
async fn failing_job_reports_error() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    // a malformed coordinate file is only discovered while the job runs
    std::fs::write(ws.data_dir().join("bad.csv"), "case_id,t_index,x,y\ncase_000,0,1.0\n").unwrap();
    let r = api
        .post(
            "/api/projection",
            json!({ "channel": "pressure", "case_ids": ["case_000"], "method": "umap", "external_file": "bad.csv" }),
        )
        .await;
    let id = r.json()["job_id"].as_str().unwrap().to_string();
    let job = api.wait_job(&id).await;
    assert_eq!(job["status"], "failed");
    assert!(job["result_ref"].is_null());
    assert_eq!(job["error"]["code"], "malformed_file");
    assert_error(&api.get(&format!("/api/projection/{id}")).await, StatusCode::BAD_REQUEST, "malformed_file");
}

#[tokio::test]
async fn external_projection_round_trips() {
    let ws = Workspace::new("ten.json");
    let ds = Dataset::load(&ws.manifest).unwrap();
    let scope: Vec<String> = ds.case_ids().map(String::from).collect();
    let pca = fit_pca_2d(&ds, "pressure", &scope).unwrap();
    pca.write_csv(std::fs::File::create(ws.data_dir().join("layout.csv")).unwrap()).unwrap();

    let api = ws.app();
    let pid = api
        .project(json!({ "channel": "pressure", "case_ids": scope, "method": "umap", "external_file": "layout.csv" }))
        .await;
    let body = api.get(&format!("/api/projection/{pid}")).await.json();
    assert_eq!(body["spec"]["method"], "external");
    assert_eq!(body["spec"]["method_params"]["n_neighbors"], "15");
    let got: Vec<[f64; 2]> = body["points"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| [p["x"].as_f64().unwrap(), p["y"].as_f64().unwrap()])
        .collect();
    let want: Vec<[f64; 2]> = pca.coords.values().copied().collect();
    assert_eq!(got, want);

    assert_error(
        &api.post(
            "/api/projection",
            json!({ "channel": "pressure", "case_ids": ["case_000"], "method": "external", "external_file": "absent.csv" }),
        )
        .await,
        StatusCode::BAD_REQUEST,
        "external_file_unreadable",
    );
}

#[tokio::test]
async fn clustering_is_synchronous_and_content_addressed() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let (pid, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    assert_eq!(model["n_clusters"], 4);
    assert_eq!(model["n_noise"], 26);
    assert_eq!(model["centroids"].as_array().unwrap().len(), 4);
    assert_eq!(model["labels"].as_array().unwrap().len(), 172);
    assert_eq!(api.cluster(&pid, 0.8, 4).await, model);
    assert_ne!(api.cluster(&pid, 0.7, 4).await["clustering_id"], cid);
    assert_eq!(api.get(&format!("/api/clustering/{cid}")).await.json(), model);

    let bad = |eps: f64, ms: usize| json!({ "projection_id": pid, "eps": eps, "min_samples": ms });
    assert_error(&api.post("/api/clustering", bad(0.0, 4)).await, StatusCode::BAD_REQUEST, "invalid_clustering_params");
    assert_error(&api.post("/api/clustering", bad(0.5, 0)).await, StatusCode::BAD_REQUEST, "invalid_clustering_params");
    assert_error(
        &api.post("/api/clustering", json!({ "projection_id": "ffff", "eps": 1.0, "min_samples": 3 })).await,
        StatusCode::NOT_FOUND,
        "unknown_projection",
    );
    assert_error(&api.get("/api/clustering/ffff").await, StatusCode::NOT_FOUND, "unknown_clustering");
}

#[tokio::test]
async fn trajectories_and_similarity() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let pid = api.project_all("pressure").await;

    let t = api.get(&format!("/api/trajectory/{pid}/case_004")).await.json();
    let pts = t["trajectory"]["points"].as_array().unwrap();
    assert!(pts.windows(2).all(|w| w[0]["t_index"].as_u64() < w[1]["t_index"].as_u64()));
    assert_error(&api.get(&format!("/api/trajectory/{pid}/nope")).await, StatusCode::NOT_FOUND, "unknown_case");

    let sim = api.get(&format!("/api/similar/{pid}/case_004")).await.json();
    let ranked = sim["similar"].as_array().unwrap();
    assert_eq!(ranked.len(), 6);
    assert_eq!(ranked[0]["case_id"], "case_009");
    assert_eq!(ranked[0]["value"], 0.0);
    assert_eq!(ranked[0]["trajectory"]["points"], t["trajectory"]["points"]);
    assert!(ranked.windows(2).all(|w| w[0]["value"].as_f64() <= w[1]["value"].as_f64()));
    let three = api.get(&format!("/api/similar/{pid}/case_004?k=3")).await.json();
    assert_eq!(three["similar"].as_array().unwrap()[..], ranked[..3]);
    assert_error(&api.get(&format!("/api/similar/{pid}/case_004?k=0")).await, StatusCode::BAD_REQUEST, "invalid_k");
    assert_error(&api.get(&format!("/api/similar/{pid}/case_004?k=x")).await, StatusCode::BAD_REQUEST, "invalid_parameter");

    let job = api.post("/api/similarity", json!({ "projection_id": pid })).await.json();
    let sid = job["job_id"].as_str().unwrap().to_string();
    assert_eq!(api.wait_job(&sid).await["status"], "done");
    let m = api.get(&format!("/api/similarity/{sid}")).await.json();
    let ids: Vec<&str> = m["matrix"]["case_ids"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    let values = m["matrix"]["values"].as_array().unwrap();
    assert_eq!(ids.len(), 10);
    #[allow(clippy::needless_range_loop)]
    for i in 0..ids.len() {
        assert_eq!(values[i][i], 0.0);
        for j in 0..ids.len() {
            assert_eq!(values[i][j], values[j][i]);
        }
    }
    let (a, b) = (ids.iter().position(|i| *i == "case_004").unwrap(), ids.iter().position(|i| *i == "case_009").unwrap());
    assert_eq!(values[a][b], 0.0);
    let ranked_values: Vec<f64> = ranked.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    let mut row: Vec<f64> = (0..ids.len()).filter(|j| *j != a).map(|j| values[a][j].as_f64().unwrap()).collect();
    row.sort_by(f64::total_cmp);
    assert_eq!(ranked_values, row[..6]);
}

#[tokio::test]
async fn frames_and_images() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let f = api.get("/api/frames/case_001?channel=pressure").await.json();
    let frames = f["frames"].as_array().unwrap();
    let ds = Dataset::load(&ws.manifest).unwrap();
    assert_eq!(frames.len(), ds.case("case_001").unwrap().frame_count("pressure"));
    let url = frames[2]["image_url"].as_str().unwrap();
    assert_eq!(url, "/api/image/case_001/pressure/2");

    let img = api.get(url).await;
    assert_eq!(img.status, StatusCode::OK);
    assert_eq!(img.content_type.as_deref(), Some("image/png"));
    assert_eq!(img.bytes, std::fs::read(ds.image_path("case_001", "pressure", 2).unwrap()).unwrap());

    assert_error(&api.get("/api/frames/nope").await, StatusCode::NOT_FOUND, "unknown_case");
    assert_error(&api.get("/api/frames/case_001?channel=x").await, StatusCode::NOT_FOUND, "missing_channel");
    assert_error(&api.get("/api/image/case_001/pressure/999").await, StatusCode::NOT_FOUND, "unknown_frame");
    assert_error(&api.get("/api/image/case_001/pressure/-1").await, StatusCode::BAD_REQUEST, "invalid_parameter");
}

#[tokio::test]
async fn annotations_are_versioned() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let (_, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    let url = format!("/api/annotation/{cid}/1");

    assert_error(&api.get(&url).await, StatusCode::NOT_FOUND, "no_annotation");
    let v1 = api.put(&url, json!({ "text": "scram mode", "author": "ex" })).await.json();
    assert_eq!(v1["annotation"]["version"], 1);
    assert_eq!(v1["annotation"]["centroid"], model["centroids"][1]["frame"]);
    let v2 = api.put(&url, json!({ "text": "scram mode, anchored flame" })).await.json();
    assert_eq!(v2["annotation"]["version"], 2);
    let got = api.get(&url).await.json();
    assert_eq!(got["annotation"], v2["annotation"]);
    assert_eq!(got["versions"], 2);
    let listed = api.get(&format!("/api/annotations/{cid}")).await.json();
    assert_eq!(listed["annotations"].as_array().unwrap().len(), 1);

    assert_error(
        &api.put(&format!("/api/annotation/{cid}/-1"), json!({ "text": "x" })).await,
        StatusCode::CONFLICT,
        "noise_cluster",
    );
    assert_error(
        &api.put(&format!("/api/annotation/{cid}/42"), json!({ "text": "x" })).await,
        StatusCode::NOT_FOUND,
        "unknown_cluster",
    );
    assert_error(&api.put(&url, json!({ "text": "  " })).await, StatusCode::BAD_REQUEST, "empty_text");
    assert_error(
        &api.put("/api/annotation/ffff/0", json!({ "text": "x" })).await,
        StatusCode::NOT_FOUND,
        "unknown_clustering",
    );
}

#[tokio::test]
async fn report_endpoints() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let (_, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    let frame_req = json!({ "clustering_id": cid, "case_id": "case_002", "t_index": 3 });

    assert_error(&api.post("/api/report/frame", frame_req.clone()).await, StatusCode::CONFLICT, "no_annotated_centroids");
    for c in 0..4 {
        api.put(&format!("/api/annotation/{cid}/{c}"), json!({ "text": format!("mode {c}") })).await;
    }

    let r = api.post("/api/report/frame", frame_req.clone()).await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let report = r.json()["report"].clone();
    assert_eq!(report["kind"], "frame");
    assert_eq!(report["context_refs"].as_array().unwrap().len(), 3);
    let id = report["report_id"].as_str().unwrap();

    let stored = api.get(&format!("/api/report/{id}")).await.json();
    assert_eq!(stored["report"], report);
    assert_eq!(stored["revision"], 1);
    let prompt = api.get(&format!("/api/report/{id}/prompt")).await.json();
    assert_eq!(prompt["matches_report"], true);
    assert_eq!(prompt["digest"], report["prompt_digest"]);

    let edited = api.put(&format!("/api/report/{id}"), json!({ "text": "expert rewrite" })).await.json();
    assert_eq!(edited["report"]["text"], "expert rewrite");
    assert_eq!(edited["report"]["edited"], true);
    assert_eq!(edited["revision"], 2);
    assert_error(&api.put(&format!("/api/report/{id}"), json!({ "text": "" })).await, StatusCode::BAD_REQUEST, "empty_text");
    assert_error(&api.get("/api/report/ffff").await, StatusCode::NOT_FOUND, "unknown_report");

    let case = api.post("/api/report/case", json!({ "clustering_id": cid, "case_id": "case_002" })).await;
    assert_eq!(case.status, StatusCode::OK);
    let case = case.json()["report"].clone();
    let sources = case["source_reports"].as_array().unwrap();
    // the edited frame report is reused at its latest revision
    let reused = sources.iter().find(|s| s["report_id"] == id).unwrap();
    assert_eq!(reused["revision"], 2);
    let case_prompt = api.get(&format!("/api/report/{}/prompt", case["report_id"].as_str().unwrap())).await.json();
    assert_eq!(case_prompt["matches_report"], true);
    assert!(case_prompt["canonical"].as_str().unwrap().contains("expert rewrite"));

    assert_error(
        &api.post("/api/report/frame", json!({ "clustering_id": cid, "case_id": "case_002", "t_index": 999 })).await,
        StatusCode::NOT_FOUND,
        "unknown_frame",
    );
    assert_error(
        &api.post("/api/report/frame", json!({ "clustering_id": cid, "case_id": "case_002" })).await,
        StatusCode::BAD_REQUEST,
        "missing_t_index",
    );
    assert_error(
        &api.post("/api/report/case", json!({ "clustering_id": cid, "case_id": "nope" })).await,
        StatusCode::NOT_FOUND,
        "unknown_case",
    );
}

#[tokio::test]
async fn transition_reports() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let (_, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    for c in 0..4 {
        api.put(&format!("/api/annotation/{cid}/{c}"), json!({ "text": format!("mode {c}") })).await;
    }
    let mut found = None;
    for i in 0..10 {
        let case = format!("case_{i:03}");
        let tr = api.get(&format!("/api/transitions/{cid}/{case}")).await.json();
        if let Some(first) = tr["transitions"].as_array().unwrap().first() {
            found = Some((case, first.clone()));
            break;
        }
    }
    let (case, tr) = found.expect("fixture has label changes");
    let t = tr["t_index"].as_u64().unwrap();
    let r = api
        .post("/api/report/transition", json!({ "clustering_id": cid, "case_id": case, "t_index": t }))
        .await;
    assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
    let report = r.json()["report"].clone();
    assert_eq!(report["kind"], "transition");
    assert_eq!(report["transition"], tr);
    let prompt = api
        .get(&format!("/api/report/{}/prompt", report["report_id"].as_str().unwrap()))
        .await
        .json();
    assert_eq!(prompt["matches_report"], true);

    assert_error(
        &api.post("/api/report/transition", json!({ "clustering_id": cid, "case_id": case, "t_index": 0 })).await,
        StatusCode::NOT_FOUND,
        "unknown_transition",
    );
    assert_error(&api.get(&format!("/api/transitions/{cid}/nope")).await, StatusCode::NOT_FOUND, "unknown_case");
}

#[tokio::test]
async fn unconfigured_model_is_unavailable() {
    let ws = Workspace::new("ten.json");
    let api = ws.app_with(Vlm::new(&VlmConfig::default()).unwrap(), None);
    let (_, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    api.put(&format!("/api/annotation/{cid}/0"), json!({ "text": "mode" })).await;
    assert_error(
        &api.post("/api/report/frame", json!({ "clustering_id": cid, "case_id": "case_002", "t_index": 1 })).await,
        StatusCode::SERVICE_UNAVAILABLE,
        "vlm_unavailable",
    );
}

#[tokio::test]
async fn gets_are_idempotent() {
    let ws = Workspace::new("ten.json");
    let api = ws.app();
    let (pid, model) = clustered(&api).await;
    let cid = model["clustering_id"].as_str().unwrap();
    for url in [
        "/api/health".to_string(),
        "/api/cases?p_min=1".to_string(),
        format!("/api/projection/{pid}"),
        format!("/api/jobs/{pid}"),
        format!("/api/clustering/{cid}"),
        format!("/api/trajectory/{pid}/case_003"),
        format!("/api/similar/{pid}/case_003"),
        "/api/frames/case_003".to_string(),
        format!("/api/transitions/{cid}/case_003"),
    ] {
        let a = api.get(&url).await;
        let b = api.get(&url).await;
        assert_eq!(a.status, StatusCode::OK, "{url}");
        assert_eq!(a.bytes, b.bytes, "{url}");
    }
}

#[tokio::test]
async fn state_survives_restart() {
    let ws = Workspace::new("ten.json");
    let (pid, model) = {
        let api = ws.app();
        let (pid, model) = clustered(&api).await;
        let cid = model["clustering_id"].as_str().unwrap();
        api.put(&format!("/api/annotation/{cid}/2"), json!({ "text": "thermal choking" })).await;
        (pid, model)
    };
    let cid = model["clustering_id"].as_str().unwrap();
    let api = ws.app();
    assert_eq!(api.get(&format!("/api/jobs/{pid}")).await.json()["status"], "done");
    assert_eq!(api.get(&format!("/api/projection/{pid}")).await.status, StatusCode::OK);
    assert_eq!(api.get(&format!("/api/clustering/{cid}")).await.json(), model);
    let ann = api.get(&format!("/api/annotation/{cid}/2")).await.json();
    assert_eq!(ann["annotation"]["text"], "thermal choking");
}

#[tokio::test]
async fn static_assets_with_spa_fallback() {
    let ws = Workspace::new("mini.json");
    let web = ws.dir.path().join("web");
    std::fs::create_dir_all(web.join("assets")).unwrap();
    std::fs::write(web.join("index.html"), "<!doctype html><title>tfv</title>").unwrap();
    std::fs::write(web.join("assets/app.js"), "console.log(1)").unwrap();
    let api = ws.app_with(Vlm::mock(), Some(web));

    let index = api.get("/").await;
    assert_eq!(index.status, StatusCode::OK);
    assert!(index.content_type.unwrap().starts_with("text/html"));
    assert_eq!(index.bytes, b"<!doctype html><title>tfv</title>");
    let js = api.get("/assets/app.js").await;
    assert_eq!(js.bytes, b"console.log(1)");
    assert!(js.content_type.unwrap().contains("javascript"));
    assert_eq!(api.get("/cases/case_001").await.bytes, index.bytes);
    // API misses stay JSON errors
    assert_error(&api.get("/api/unknown").await, StatusCode::NOT_FOUND, "no_route");
    assert_eq!(api.get("/api/health").await.json()["n_cases"], 4);

    let bare = ws.app();
    assert_error(&bare.get("/").await, StatusCode::NOT_FOUND, "no_route");
}
