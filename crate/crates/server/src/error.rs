use std::borrow::Cow;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use tfv_core::clustering::ClusteringError;
use tfv_core::projection::ProjectionError;
use tfv_core::trajectory::TrajectoryError;
use tfv_core::DatasetError;
use tfv_reports::{AnnotationError, ContextError, ReportError, VlmError};

use crate::SCHEMA_VERSION;

/// Error body: `{schema_version, error: {code, message}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: Cow<'static, str>,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: impl Into<Cow<'static, str>>, message: impl Into<String>) -> Self {
        Self {
            status,
            code: code.into(),
            message: message.into(),
        }
    }

    pub fn bad_request(code: impl Into<Cow<'static, str>>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn not_found(code: impl Into<Cow<'static, str>>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, code, message)
    }

    pub fn conflict(code: impl Into<Cow<'static, str>>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(code = %self.code, message = %self.message, "request failed");
        }
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::InvalidRange { .. } => Self::bad_request("invalid_range", e.to_string()),
            other => Self::internal(other.to_string()),
        }
    }
}

impl From<ProjectionError> for ApiError {
    fn from(e: ProjectionError) -> Self {
        let code = match &e {
            ProjectionError::UnknownCase(_) => return Self::not_found("unknown_case", e.to_string()),
            ProjectionError::EmptyScope => "empty_scope",
            ProjectionError::MissingChannel { .. } => "missing_channel",
            ProjectionError::TooFewFrames(_) => "too_few_frames",
            ProjectionError::DimTooSmall(_) => "dim_too_small",
            ProjectionError::MissingExternalFile => "missing_external_file",
            ProjectionError::MissingFrameCoordinate(_) => "missing_frame_coordinate",
            ProjectionError::DuplicateRow(_) => "duplicate_row",
            ProjectionError::UnknownFrame(_) => "unknown_frame",
            ProjectionError::MalformedFile(_) => "malformed_file",
            ProjectionError::Io { .. } => "external_file_unreadable",
        };
        Self::bad_request(code, e.to_string())
    }
}

impl From<ClusteringError> for ApiError {
    fn from(e: ClusteringError) -> Self {
        Self::bad_request("invalid_clustering_params", e.to_string())
    }
}

impl From<TrajectoryError> for ApiError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::UnknownCase(_) => Self::not_found("unknown_case", e.to_string()),
            TrajectoryError::TrajectoryTooShort { .. } => Self::bad_request("trajectory_too_short", e.to_string()),
            TrajectoryError::InvalidK => Self::bad_request("invalid_k", e.to_string()),
            other => Self::bad_request("invalid_trajectory_request", other.to_string()),
        }
    }
}

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        match e {
            AnnotationError::UnknownCluster { .. } => Self::not_found("unknown_cluster", e.to_string()),
            AnnotationError::EmptyText => Self::bad_request("empty_text", e.to_string()),
            AnnotationError::Log(l) => Self::internal(l.to_string()),
        }
    }
}

impl From<VlmError> for ApiError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::Unavailable(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "vlm_unavailable", e.to_string()),
            VlmError::MalformedResponse(_) => Self::new(StatusCode::BAD_GATEWAY, "vlm_malformed_response", e.to_string()),
            VlmError::Image { .. } => Self::internal(e.to_string()),
            VlmError::Config(_) => Self::new(StatusCode::SERVICE_UNAVAILABLE, "vlm_unavailable", e.to_string()),
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::UnknownFrame(_) => Self::not_found("unknown_frame", e.to_string()),
            ReportError::UnknownCase(_) => Self::not_found("unknown_case", e.to_string()),
            ReportError::UnknownTransition { .. } => Self::not_found("unknown_transition", e.to_string()),
            ReportError::Context(ContextError::NoAnnotatedCentroids) => {
                Self::conflict("no_annotated_centroids", e.to_string())
            }
            ReportError::Context(ContextError::InvalidK) => Self::bad_request("invalid_k", e.to_string()),
            ReportError::Vlm(v) => v.into(),
            ReportError::Store(_) | ReportError::MissingProvenance { .. } => Self::internal(e.to_string()),
        }
    }
}
