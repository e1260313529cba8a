use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tfv_core::{ClusterModel, Dataset, ProjectionResult};
use tfv_reports::{AnnotationStore, ReportEngine, ReportStore, Vlm};
use tokio::sync::Semaphore;

use crate::error::ApiError;
use crate::jobs::JobRegistry;

/// Full pairwise dissimilarity table of one projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub projection_id: String,
    pub case_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

/// In-memory map mirrored as one JSON file per entry.
#[derive(Debug)]
pub struct DiskCache<T> {
    dir: PathBuf,
    entries: RwLock<HashMap<String, Arc<T>>>,
}

impl<T: Serialize + DeserializeOwned> DiskCache<T> {
    fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            entries: RwLock::new(HashMap::new()),
        }
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.json"))
    }

    pub fn get(&self, id: &str) -> Option<Arc<T>> {
        // ids come from URLs; only plain hex names can hit the disk
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return None;
        }
        if let Some(v) = self.entries.read().unwrap_or_else(|e| e.into_inner()).get(id) {
            return Some(v.clone());
        }
        let bytes = fs::read(self.path(id)).ok()?;
        match serde_json::from_slice::<T>(&bytes) {
            Ok(v) => {
                let v = Arc::new(v);
                self.entries
                    .write()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert(id.to_string(), v.clone());
                Some(v)
            }
            Err(e) => {
                tracing::warn!(id, error = %e, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn insert(&self, id: &str, value: T) -> Result<Arc<T>, ApiError> {
        fs::create_dir_all(&self.dir).map_err(|e| ApiError::internal(format!("{}: {e}", self.dir.display())))?;
        let bytes = serde_json::to_vec(&value).map_err(|e| ApiError::internal(e.to_string()))?;
        let path = self.path(id);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes)
            .and_then(|_| fs::rename(&tmp, &path))
            .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        let value = Arc::new(value);
        self.entries
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.to_string(), value.clone());
        Ok(value)
    }
}

pub struct AppState {
    pub dataset: Arc<Dataset>,
    pub cache_dir: PathBuf,
    pub projections: DiskCache<ProjectionResult>,
    pub clusterings: DiskCache<ClusterModel>,
    pub similarities: DiskCache<SimilarityMatrix>,
    pub jobs: JobRegistry,
    /// Bounds the number of jobs computing at once.
    pub pool: Arc<Semaphore>,
    pub engine: ReportEngine,
}

impl AppState {
    /// Opens (or creates) the caches and stores under `cache_dir`.
    pub fn open(dataset: Dataset, cache_dir: &Path, vlm: Vlm) -> Result<Self, ApiError> {
        let store_dir = cache_dir.join("store");
        fs::create_dir_all(&store_dir).map_err(|e| ApiError::internal(format!("{}: {e}", store_dir.display())))?;
        let annotations = AnnotationStore::open(store_dir.join("annotations.jsonl"))?;
        let reports = ReportStore::open(store_dir.join("reports.jsonl")).map_err(|e| ApiError::internal(e.to_string()))?;
        let dataset = Arc::new(dataset);
        let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
        Ok(Self {
            engine: ReportEngine::new(dataset.clone(), Arc::new(annotations), Arc::new(reports), Arc::new(vlm)),
            dataset,
            cache_dir: cache_dir.to_path_buf(),
            projections: DiskCache::new(cache_dir.join("projections")),
            clusterings: DiskCache::new(cache_dir.join("clusterings")),
            similarities: DiskCache::new(cache_dir.join("similarity")),
            jobs: JobRegistry::default(),
            pool: Arc::new(Semaphore::new(workers)),
        })
    }

    pub fn projection(&self, id: &str) -> Result<Arc<ProjectionResult>, ApiError> {
        if let Some(p) = self.projections.get(id) {
            return Ok(p);
        }
        match self.jobs.get(id) {
            Some(job) if !job.status.is_terminal() => Err(ApiError::conflict(
                "projection_not_ready",
                format!("projection {id} is still being computed"),
            )),
            Some(job) if job.error.is_some() => Err(job.error.expect("checked").to_error()),
            _ => Err(ApiError::not_found("unknown_projection", format!("no projection {id}"))),
        }
    }

    pub fn clustering(&self, id: &str) -> Result<Arc<ClusterModel>, ApiError> {
        self.clusterings
            .get(id)
            .ok_or_else(|| ApiError::not_found("unknown_clustering", format!("no clustering {id}")))
    }
}
