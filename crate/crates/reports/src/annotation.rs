//! Expert annotations attached to cluster centroids.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tfv_core::clustering::NOISE;
use tfv_core::{ClusterModel, FrameKey};
use thiserror::Error;

use crate::log::{JsonLog, LogError};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterKey {
    pub clustering_id: String,
    pub cluster_id: i32,
}

impl ClusterKey {
    pub fn new(clustering_id: impl Into<String>, cluster_id: i32) -> Self {
        Self {
            clustering_id: clustering_id.into(),
            cluster_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub cluster_key: ClusterKey,
    pub centroid: FrameKey,
    pub text: String,
    pub author: String,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    /// 1 for the first save of a cluster, incremented on every overwrite.
    pub version: u32,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("clustering {clustering_id} has no cluster {cluster_id}")]
    UnknownCluster { clustering_id: String, cluster_id: i32 },
    #[error("annotation text is empty")]
    EmptyText,
    #[error(transparent)]
    Log(#[from] LogError),
}

type History = BTreeMap<ClusterKey, Vec<AnnotationRecord>>;

/// Versioned annotation store backed by an append-only log. Writes are
/// serialised; reads only take the index lock.
#[derive(Debug)]
pub struct AnnotationStore {
    log: Mutex<JsonLog<AnnotationRecord>>,
    index: RwLock<History>,
}

impl AnnotationStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AnnotationError> {
        let (log, records) = JsonLog::<AnnotationRecord>::open(path)?;
        let mut index = History::new();
        for rec in records {
            index.entry(rec.cluster_key.clone()).or_default().push(rec);
        }
        Ok(Self {
            log: Mutex::new(log),
            index: RwLock::new(index),
        })
    }

    /// Stores `text` for `cluster_id` of `model`, keeping earlier versions.
    pub fn save(
        &self,
        model: &ClusterModel,
        cluster_id: i32,
        text: &str,
        author: &str,
    ) -> Result<AnnotationRecord, AnnotationError> {
        let clustering_id = model.params.clustering_id();
        let centroid = match model.centroid(cluster_id) {
            Some(c) if cluster_id != NOISE => c.frame.clone(),
            _ => {
                return Err(AnnotationError::UnknownCluster {
                    clustering_id,
                    cluster_id,
                })
            }
        };
        if text.trim().is_empty() {
            return Err(AnnotationError::EmptyText);
        }
        let key = ClusterKey::new(clustering_id, cluster_id);

        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        let now = Utc::now();
        let previous = self.latest(&key);
        let record = AnnotationRecord {
            cluster_key: key.clone(),
            centroid,
            text: text.to_string(),
            author: author.to_string(),
            created_at: previous.as_ref().map_or(now, |p| p.created_at),
            updated_at: now,
            version: previous.map_or(1, |p| p.version + 1),
        };
        log.append(&record)?;
        self.index
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .entry(key)
            .or_default()
            .push(record.clone());
        Ok(record)
    }

    pub fn latest(&self, key: &ClusterKey) -> Option<AnnotationRecord> {
        self.read().get(key).and_then(|h| h.last().cloned())
    }

    pub fn version(&self, key: &ClusterKey, version: u32) -> Option<AnnotationRecord> {
        self.read()
            .get(key)
            .and_then(|h| h.iter().find(|r| r.version == version).cloned())
    }

    pub fn history(&self, key: &ClusterKey) -> Vec<AnnotationRecord> {
        self.read().get(key).cloned().unwrap_or_default()
    }

    /// Latest annotation of every cluster of `model` whose stored centroid
    /// still matches the model.
    pub fn for_model(&self, model: &ClusterModel) -> BTreeMap<i32, AnnotationRecord> {
        let id = model.params.clustering_id();
        self.read()
            .range(ClusterKey::new(id.clone(), i32::MIN)..=ClusterKey::new(id, i32::MAX))
            .filter_map(|(key, h)| {
                let rec = h.last()?;
                let centroid = model.centroid(key.cluster_id)?;
                (centroid.frame == rec.centroid).then(|| (key.cluster_id, rec.clone()))
            })
            .collect()
    }

    /// Total number of stored versions across all clusters.
    pub fn version_count(&self) -> usize {
        self.read().values().map(Vec::len).sum()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, History> {
        self.index.read().unwrap_or_else(|e| e.into_inner())
    }
}
