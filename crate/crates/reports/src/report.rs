use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tfv_core::clustering::NOISE;
use tfv_core::{ClusterModel, FrameKey};

use crate::log::{JsonLog, LogError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    Frame,
    Case,
    Transition,
}

/// What a report describes: a frame, a whole case, or the pair of frames
/// `t_index - 1, t_index` around a transition.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReportTarget {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_index: Option<u32>,
}

impl ReportTarget {
    pub fn frame(key: &FrameKey) -> Self {
        Self {
            case_id: key.case_id.clone(),
            t_index: Some(key.t_index),
        }
    }

    pub fn case(case_id: &str) -> Self {
        Self {
            case_id: case_id.to_string(),
            t_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextRef {
    pub cluster_id: i32,
    pub centroid: FrameKey,
    pub distance: f64,
    pub annotation_version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub report_id: String,
    pub kind: ReportKind,
    pub clustering_id: String,
    pub channel: String,
    pub target: ReportTarget,
    pub text: String,
    /// Ascending by distance.
    pub context_refs: Vec<ContextRef>,
    /// Frame reports a case summary was built from, chronological.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_reports: Vec<SourceRef>,
    /// Frames whose images a case summary included.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub image_frames: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transition: Option<Transition>,
    pub model_id: String,
    pub template_version: String,
    pub prompt_digest: String,
    pub generated_at: DateTime<Utc>,
    pub edited: bool,
}

/// A specific stored version of a frame report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRef {
    pub report_id: String,
    pub t_index: u32,
    /// 1-based position in the report's history.
    pub revision: u32,
}

/// Id shared by every regeneration of the same request.
pub fn report_id(kind: ReportKind, clustering_id: &str, channel: &str, target: &ReportTarget) -> String {
    let canonical = serde_json::to_vec(&(kind, clustering_id, channel, target)).expect("serialisable");
    hex::encode(Sha256::digest(&canonical))[..32].to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    /// Index of the first frame carrying the new label.
    pub t_index: u32,
    pub from_cluster: i32,
    pub to_cluster: i32,
    pub involves_noise: bool,
}

/// Every label change between consecutive frames of `case_id`.
pub fn detect_transitions(model: &ClusterModel, case_id: &str) -> Vec<Transition> {
    transitions_in(&model.case_labels(case_id))
}

pub fn transitions_in(labels: &[(u32, i32)]) -> Vec<Transition> {
    labels
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| Transition {
            t_index: w[1].0,
            from_cluster: w[0].1,
            to_cluster: w[1].1,
            involves_noise: w[0].1 == NOISE || w[1].1 == NOISE,
        })
        .collect()
}

/// Append-only report history; the latest record per id wins.
#[derive(Debug)]
pub struct ReportStore {
    log: Mutex<JsonLog<Report>>,
    index: RwLock<BTreeMap<String, Vec<Report>>>,
}

impl ReportStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let (log, records) = JsonLog::<Report>::open(path)?;
        let mut index: BTreeMap<String, Vec<Report>> = BTreeMap::new();
        for r in records {
            index.entry(r.report_id.clone()).or_default().push(r);
        }
        Ok(Self {
            log: Mutex::new(log),
            index: RwLock::new(index),
        })
    }

    /// Appends `report` and returns its 1-based revision number.
    pub fn put(&self, report: &Report) -> Result<u32, LogError> {
        let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
        log.append(report)?;
        let mut index = self.index.write().unwrap_or_else(|e| e.into_inner());
        let history = index.entry(report.report_id.clone()).or_default();
        history.push(report.clone());
        Ok(history.len() as u32)
    }

    pub fn get(&self, report_id: &str) -> Option<Report> {
        self.read(|idx| idx.get(report_id).and_then(|h| h.last().cloned()))
    }

    pub fn revision(&self, report_id: &str, revision: u32) -> Option<Report> {
        let i = (revision as usize).checked_sub(1)?;
        self.read(|idx| idx.get(report_id).and_then(|h| h.get(i).cloned()))
    }

    pub fn revision_count(&self, report_id: &str) -> u32 {
        self.read(|idx| idx.get(report_id).map_or(0, |h| h.len() as u32))
    }

    pub fn history(&self, report_id: &str) -> Vec<Report> {
        self.read(|idx| idx.get(report_id).cloned().unwrap_or_default())
    }

    /// Replaces the text of the latest version, flagging it as edited.
    pub fn edit(&self, report_id: &str, text: &str) -> Result<Option<Report>, LogError> {
        let Some(mut report) = self.get(report_id) else {
            return Ok(None);
        };
        report.text = text.to_string();
        report.edited = true;
        self.put(&report)?;
        Ok(Some(report))
    }

    pub fn len(&self) -> usize {
        self.read(|idx| idx.values().map(Vec::len).sum())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn read<R>(&self, f: impl FnOnce(&BTreeMap<String, Vec<Report>>) -> R) -> R {
        f(&self.index.read().unwrap_or_else(|e| e.into_inner()))
    }
}
