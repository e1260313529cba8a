//! HTTP service and batch commands over a loaded dataset.
//!
//! [`api::router`] builds the axum application; [`state::AppState`] holds the
//! immutable dataset, result caches, the job registry and the report engine.

pub mod api;
pub mod cli;
pub mod error;
pub mod jobs;
pub mod state;

pub use api::router;
pub use error::ApiError;
pub use state::AppState;

/// Version of the JSON response layout.
pub const SCHEMA_VERSION: u32 = 1;
