//! Expert annotations on cluster centroids and model-generated frame, case
//! and transition reports built on top of them.

pub mod annotation;
pub mod context;
pub mod engine;
pub mod log;
pub mod prompt;
pub mod report;
pub mod vlm;

pub use annotation::{AnnotationError, AnnotationRecord, AnnotationStore, ClusterKey};
pub use context::{nearest_annotated_centroids, ContextError, ContextItem};
pub use engine::{DatasetImages, LatentView, ReportEngine, ReportError, DEFAULT_CONTEXT_K};
pub use prompt::{Prompt, PromptPart};
pub use report::{detect_transitions, Report, ReportKind, ReportStore, ReportTarget, Transition};
pub use vlm::{ImageSource, Vlm, VlmConfig, VlmError};
