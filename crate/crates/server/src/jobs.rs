//! Registry of long-running computations polled by clients.

use std::collections::HashMap;
use std::sync::Mutex;

use axum::http::StatusCode;
use serde::Serialize;

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Projection,
    Clustering,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobStatus {
    Pending,
    Running,
    Done,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Done | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobFailure {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl From<&ApiError> for JobFailure {
    fn from(e: &ApiError) -> Self {
        Self {
            code: e.code.to_string(),
            message: e.message.clone(),
            status: e.status.as_u16(),
        }
    }
}

impl JobFailure {
    pub fn to_error(&self) -> ApiError {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        ApiError::new(status, self.code.clone(), self.message.clone())
    }
}

/// `result_ref` is set exactly when the job is done.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JobHandle {
    pub job_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    pub result_ref: Option<String>,
    pub error: Option<JobFailure>,
}

impl JobHandle {
    pub fn done(job_id: impl Into<String>, kind: JobKind, result_ref: impl Into<String>) -> Self {
        Self {
            job_id: job_id.into(),
            kind,
            status: JobStatus::Done,
            result_ref: Some(result_ref.into()),
            error: None,
        }
    }
}

#[derive(Debug, Default)]
pub struct JobRegistry {
    jobs: Mutex<HashMap<String, JobHandle>>,
}

impl JobRegistry {
    pub fn get(&self, job_id: &str) -> Option<JobHandle> {
        self.lock().get(job_id).cloned()
    }

    /// Registers a pending job unless one with the same id exists. Returns the
    /// current handle and whether it was newly created.
    pub fn submit(&self, job_id: &str, kind: JobKind) -> (JobHandle, bool) {
        let mut jobs = self.lock();
        if let Some(existing) = jobs.get(job_id) {
            return (existing.clone(), false);
        }
        let handle = JobHandle {
            job_id: job_id.to_string(),
            kind,
            status: JobStatus::Pending,
            result_ref: None,
            error: None,
        };
        jobs.insert(job_id.to_string(), handle.clone());
        (handle, true)
    }

    /// Records an already available result.
    pub fn record_done(&self, job_id: &str, kind: JobKind, result_ref: &str) -> JobHandle {
        let mut jobs = self.lock();
        let handle = jobs
            .entry(job_id.to_string())
            .or_insert_with(|| JobHandle::done(job_id, kind, result_ref));
        if !handle.status.is_terminal() {
            *handle = JobHandle::done(job_id, kind, result_ref);
        }
        handle.clone()
    }

    pub fn start(&self, job_id: &str) {
        self.update(job_id, |h| h.status = JobStatus::Running);
    }

    pub fn finish(&self, job_id: &str, result_ref: &str) {
        self.update(job_id, |h| {
            h.status = JobStatus::Done;
            h.result_ref = Some(result_ref.to_string());
        });
    }

    pub fn fail(&self, job_id: &str, error: &ApiError) {
        self.update(job_id, |h| {
            h.status = JobStatus::Failed;
            h.error = Some(error.into());
        });
    }

    fn update(&self, job_id: &str, f: impl FnOnce(&mut JobHandle)) {
        if let Some(h) = self.lock().get_mut(job_id) {
            if !h.status.is_terminal() {
                f(h);
            }
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, HashMap<String, JobHandle>> {
        self.jobs.lock().unwrap_or_else(|e| e.into_inner())
    }
}
