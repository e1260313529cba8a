#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tfv_core::synth::{generate, ScenarioSpec};
use tfv_core::Dataset;
use tfv_reports::Vlm;
use tfv_server::{router, AppState};
use tower::ServiceExt;

pub fn fixture_spec(name: &str) -> ScenarioSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name);
    ScenarioSpec::from_json_file(&path).unwrap()
}

/// A generated dataset plus a cache directory, both in one temp dir.
pub struct Workspace {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub cache: PathBuf,
}

impl Workspace {
    pub fn new(fixture: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        generate(&fixture_spec(fixture), &dir.path().join("data")).unwrap();
        Self {
            manifest: dir.path().join("data/manifest.json"),
            cache: dir.path().join("cache"),
            dir,
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.dir.path().join("data")
    }

    pub fn app(&self) -> Api {
        self.app_with(Vlm::mock(), None)
    }

    pub fn app_with(&self, vlm: Vlm, static_dir: Option<PathBuf>) -> Api {
        let ds = Dataset::load(&self.manifest).unwrap();
        let state = AppState::open(ds, &self.cache, vlm).unwrap();
        Api(router(Arc::new(state), static_dir))
    }
}

pub struct Reply {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub bytes: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes)
            .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&self.bytes)))
    }
}

#[derive(Clone)]
pub struct Api(pub Router);

impl Api {
    pub async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> Reply {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header(header::CONTENT_TYPE, "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.0.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        let content_type = resp
            .headers()
            .get(header::CONTENT_TYPE)
            .map(|v| v.to_str().unwrap().to_string());
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        Reply {
            status,
            content_type,
            bytes,
        }
    }

    pub async fn get(&self, uri: &str) -> Reply {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::POST, uri, Some(body)).await
    }

    pub async fn put(&self, uri: &str, body: Value) -> Reply {
        self.call(Method::PUT, uri, Some(body)).await
    }

    /// Polls a job until it reaches a terminal state.
    pub async fn wait_job(&self, job_id: &str) -> Value {
        let start = Instant::now();
        loop {
            let r = self.get(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
            let job = r.json();
            if matches!(job["status"].as_str(), Some("done" | "failed")) {
                return job;
            }
            assert!(start.elapsed() < Duration::from_secs(60), "job {job_id} stuck: {job}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Submits a projection and waits for it; returns the projection id.
    pub async fn project(&self, body: Value) -> String {
        let r = self.post("/api/projection", body).await;
        assert!(r.status.is_success(), "{}", String::from_utf8_lossy(&r.bytes));
        let id = r.json()["job_id"].as_str().unwrap().to_string();
        let job = self.wait_job(&id).await;
        assert_eq!(job["status"], "done", "{job}");
        assert_eq!(job["result_ref"], id.as_str());
        id
    }

    pub async fn project_all(&self, channel: &str) -> String {
        let cases = self.get("/api/cases").await.json();
        let ids: Vec<Value> = cases["cases"].as_array().unwrap().iter().map(|c| c["case_id"].clone()).collect();
        self.project(serde_json::json!({ "channel": channel, "case_ids": ids, "method": "pca" }))
            .await
    }

    pub async fn cluster(&self, projection_id: &str, eps: f64, min_samples: usize) -> Value {
        let r = self
            .post(
                "/api/clustering",
                serde_json::json!({ "projection_id": projection_id, "eps": eps, "min_samples": min_samples }),
            )
            .await;
        assert_eq!(r.status, StatusCode::OK, "{}", String::from_utf8_lossy(&r.bytes));
        r.json()
    }
}
