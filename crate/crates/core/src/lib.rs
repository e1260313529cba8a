//! Analytics core for exploring temporal flow-field embeddings.
//!
//! The pipeline runs: load a [`dataset::Dataset`] of per-frame embeddings,
//! project them to 2D ([`projection`]), cluster the projected frames
//! ([`clustering`]), and analyse per-case trajectories ([`trajectory`]).
//! [`synth`] generates datasets with known ground truth in the same on-disk
//! formats.

pub mod clustering;
pub mod dataset;
pub mod embedding;
pub mod projection;
pub mod rng;
pub mod synth;
pub mod trajectory;

pub use clustering::{cluster, dbscan, select_centroids, Centroid, ClusterModel, ClusteringParams, NOISE};
pub use dataset::{CaseParams, CaseRecord, Dataset, DatasetError, FrameKey, FrameRef, Interval};
pub use embedding::{read_embedding_file, write_embedding_file, EmbeddingMatrix};
pub use projection::{fit_pca_2d, import_external_projection, ProjectionResult, ProjectionSpec};
pub use trajectory::{
    build_trajectory, convergence_radius, top_k_similar, trajectory_dissimilarity, Trajectory,
};
