//! Domain data model: simulation cases, their frames and embeddings.
//!
//! A dataset is described by a JSON manifest. Paths inside the manifest are
//! relative to the manifest's directory:
//!
//! ```json
//! {
//!   "dataset_name": "mini",
//!   "channels": ["pressure"],
//!   "embedding_provenance": "optional free-form note",
//!   "cases": [{
//!     "case_id": "case_000",
//!     "params": {"P_MPa": 1.2, "T_K": 700.0, "H2O_pct": 10.0},
//!     "channels": {
//!       "pressure": {
//!         "embedding_file": "embeddings/case_000.pressure.tfv",
//!         "frames": [{"t_index": 0, "time_ms": 0.0, "image": "images/case_000/pressure/0000.png"}]
//!       }
//!     }
//!   }]
//! }
//! ```
//!
//! A loaded [`Dataset`] is immutable.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::embedding::{EmbeddingFileError, EmbeddingMatrix};

/// Documented parameter ranges of the reference simulation campaign. Not
/// enforced on load.
pub const P_RANGE_MPA: (f64, f64) = (0.8, 2.1);
pub const T_RANGE_K: (f64, f64) = (565.0, 830.0);
pub const H2O_RANGE_PCT: (f64, f64) = (7.8, 14.0);

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("case {case_id} channel {channel}: embedding has {rows} rows but {frames} frames are listed")]
    ShapeMismatch {
        case_id: String,
        channel: String,
        rows: usize,
        frames: usize,
    },
    #[error("channel {channel}: case {case_id} has dim {found}, expected {expected}")]
    DimensionMismatch {
        channel: String,
        case_id: String,
        expected: usize,
        found: usize,
    },
    #[error("case {case_id} channel {channel}: embedding contains non-finite values")]
    NonFiniteEmbedding { case_id: String, channel: String },
    #[error("duplicate case id {0}")]
    DuplicateCase(String),
    #[error("invalid range: min {min} > max {max}")]
    InvalidRange { min: f64, max: f64 },
    #[error("embedding file {path}: {source}")]
    Embedding {
        path: PathBuf,
        #[source]
        source: EmbeddingFileError,
    },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Initial conditions of one simulation case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseParams {
    /// Static pressure, MPa.
    #[serde(rename = "P_MPa")]
    pub p_static: f64,
    /// Static temperature, K.
    #[serde(rename = "T_K")]
    pub t_static: f64,
    /// Water vapour fraction, percent.
    #[serde(rename = "H2O_pct")]
    pub h2o: f64,
}

impl CaseParams {
    pub fn is_valid(&self) -> bool {
        [self.p_static, self.t_static, self.h2o]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
    }

    /// Whether the parameters lie in the documented campaign ranges.
    pub fn within_reference_ranges(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        inside(self.p_static, P_RANGE_MPA)
            && inside(self.t_static, T_RANGE_K)
            && inside(self.h2o, H2O_RANGE_PCT)
    }
}

/// Identity of one frame: `(case_id, t_index)`. Ordering is lexicographic on
/// the case id, then chronological.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FrameKey {
    pub case_id: String,
    pub t_index: u32,
}

impl FrameKey {
    pub fn new(case_id: impl Into<String>, t_index: u32) -> Self {
        Self {
            case_id: case_id.into(),
            t_index,
        }
    }
}

impl fmt::Display for FrameKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.case_id, self.t_index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub t_index: u32,
    pub time_ms: f64,
    /// Path of the rendered frame image, relative to the dataset root.
    #[serde(rename = "image")]
    pub image_path: String,
}

/// Frames and embeddings of one case for one physical channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub frames: Vec<FrameRef>,
    pub embeddings: EmbeddingMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRecord {
    pub case_id: String,
    pub params: CaseParams,
    pub channels: BTreeMap<String, ChannelData>,
}

impl CaseRecord {
    pub fn channel(&self, channel: &str) -> Option<&ChannelData> {
        self.channels.get(channel)
    }

    pub fn frame_count(&self, channel: &str) -> usize {
        self.channels.get(channel).map_or(0, |c| c.frames.len())
    }
}

/// Closed interval with optionally unbounded ends.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval {
        min: None,
        max: None,
    };

    pub fn closed(min: f64, max: f64) -> Self {
        Self {
            min: Some(min),
            max: Some(max),
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        match (self.min, self.max) {
            (Some(min), Some(max)) if min > max || min.is_nan() || max.is_nan() => {
                Err(DatasetError::InvalidRange { min, max })
            }
            (Some(v), None) | (None, Some(v)) if v.is_nan() => {
                Err(DatasetError::InvalidRange { min: v, max: v })
            }
            _ => Ok(()),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.min.is_none_or(|lo| v >= lo) && self.max.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct ManifestDoc {
    pub dataset_name: String,
    pub channels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_provenance: Option<String>,
    pub cases: Vec<ManifestCase>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct ManifestCase {
    pub case_id: String,
    pub params: CaseParams,
    pub channels: BTreeMap<String, ManifestChannel>,
}

#[derive(Debug, Deserialize, Serialize)]
pub(crate) struct ManifestChannel {
    pub embedding_file: String,
    pub frames: Vec<FrameRef>,
}

/// Immutable, loaded dataset. Cheap to share behind an `Arc`.
#[derive(Debug, Clone)]
pub struct Dataset {
    name: String,
    channels: Vec<String>,
    provenance: Option<String>,
    root: PathBuf,
    cases: BTreeMap<String, CaseRecord>,
    fingerprint: String,
}

impl Dataset {
    /// Loads the manifest at `manifest_path` and every embedding file it
    /// references.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let manifest_path = manifest_path.as_ref();
        let text = read_file(manifest_path)?;
        let doc: ManifestDoc = serde_json::from_slice(&text)
            .map_err(|e| DatasetError::MalformedManifest(e.to_string()))?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();

        let mut cases = Vec::with_capacity(doc.cases.len());
        for case in doc.cases {
            let mut channels = BTreeMap::new();
            for (name, ch) in case.channels {
                let path = root.join(&ch.embedding_file);
                let bytes = read_file(&path)?;
                let embeddings = EmbeddingMatrix::from_bytes(&bytes)
                    .map_err(|source| DatasetError::Embedding { path, source })?;
                channels.insert(
                    name,
                    ChannelData {
                        frames: ch.frames,
                        embeddings,
                    },
                );
            }
            cases.push(CaseRecord {
                case_id: case.case_id,
                params: case.params,
                channels,
            });
        }
        let mut ds = Self::from_cases(doc.dataset_name, doc.channels, cases)?;
        ds.provenance = doc.embedding_provenance;
        ds.root = root;
        Ok(ds)
    }

    /// Builds a dataset from in-memory records, enforcing the same invariants
    /// as [`Dataset::load`]. Image paths resolve against the current directory
    /// unless [`Dataset::with_root`] is used.
    pub fn from_cases(
        name: impl Into<String>,
        channels: Vec<String>,
        records: Vec<CaseRecord>,
    ) -> Result<Self, DatasetError> {
        let name = name.into();
        let channel_set: BTreeSet<&str> = channels.iter().map(String::as_str).collect();
        if channel_set.len() != channels.len() {
            return Err(DatasetError::MalformedManifest(
                "duplicate channel name".into(),
            ));
        }
        let mut dims: BTreeMap<String, usize> = BTreeMap::new();
        let mut cases = BTreeMap::new();
        for rec in records {
            if rec.case_id.is_empty() {
                return Err(DatasetError::MalformedManifest("empty case_id".into()));
            }
            if !rec.params.is_valid() {
                return Err(DatasetError::MalformedManifest(format!(
                    "case {}: parameters must be finite and positive",
                    rec.case_id
                )));
            }
            for (channel, data) in &rec.channels {
                validate_channel(&rec.case_id, channel, data, &channel_set, &mut dims)?;
            }
            if cases.contains_key(&rec.case_id) {
                return Err(DatasetError::DuplicateCase(rec.case_id));
            }
            cases.insert(rec.case_id.clone(), rec);
        }
        let fingerprint = fingerprint(&name, &channels, &cases);
        Ok(Self {
            name,
            channels,
            provenance: None,
            root: PathBuf::new(),
            cases,
            fingerprint,
        })
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn embedding_provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Content digest over every case, frame and embedding value.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn n_cases(&self) -> usize {
        self.cases.len()
    }

    pub fn n_frames(&self) -> usize {
        self.cases
            .values()
            .flat_map(|c| c.channels.values())
            .map(|c| c.frames.len())
            .sum()
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.get(case_id)
    }

    /// All cases in ascending case id order.
    pub fn cases(&self) -> impl Iterator<Item = &CaseRecord> {
        self.cases.values()
    }

    pub fn case_ids(&self) -> impl Iterator<Item = &str> {
        self.cases.keys().map(String::as_str)
    }

    pub fn image_path(&self, case_id: &str, channel: &str, t_index: u32) -> Option<PathBuf> {
        let frame = self
            .case(case_id)?
            .channel(channel)?
            .frames
            .get(t_index as usize)?;
        Some(self.root.join(&frame.image_path))
    }

    /// Case ids whose parameters fall inside all three closed intervals, in
    /// ascending order.
    pub fn filter_cases(
        &self,
        p_range: Interval,
        t_range: Interval,
        h2o_range: Interval,
    ) -> Result<Vec<String>, DatasetError> {
        p_range.validate()?;
        t_range.validate()?;
        h2o_range.validate()?;
        Ok(self
            .cases
            .values()
            .filter(|c| {
                p_range.contains(c.params.p_static)
                    && t_range.contains(c.params.t_static)
                    && h2o_range.contains(c.params.h2o)
            })
            .map(|c| c.case_id.clone())
            .collect())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, DatasetError> {
    fs::read(path).map_err(|source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn validate_channel(
    case_id: &str,
    channel: &str,
    data: &ChannelData,
    known: &BTreeSet<&str>,
    dims: &mut BTreeMap<String, usize>,
) -> Result<(), DatasetError> {
    let malformed = |msg: String| DatasetError::MalformedManifest(format!("case {case_id} channel {channel}: {msg}"));
    if !known.contains(channel) {
        return Err(malformed("channel not declared in the channel list".into()));
    }
    if data.frames.is_empty() {
        return Err(malformed("no frames".into()));
    }
    for (i, frame) in data.frames.iter().enumerate() {
        if frame.t_index as usize != i {
            return Err(malformed(format!(
                "t_index values must be contiguous from 0 (position {i} has {})",
                frame.t_index
            )));
        }
        if !frame.time_ms.is_finite() {
            return Err(malformed(format!("frame {i} has non-finite time_ms")));
        }
        if i > 0 && frame.time_ms <= data.frames[i - 1].time_ms {
            return Err(malformed(format!("time_ms not strictly increasing at frame {i}")));
        }
    }
    let m = &data.embeddings;
    if m.n_frames() != data.frames.len() {
        return Err(DatasetError::ShapeMismatch {
            case_id: case_id.to_string(),
            channel: channel.to_string(),
            rows: m.n_frames(),
            frames: data.frames.len(),
        });
    }
    if m.dim() == 0 {
        return Err(malformed("embedding dim is 0".into()));
    }
    let expected = *dims.entry(channel.to_string()).or_insert(m.dim());
    if expected != m.dim() {
        return Err(DatasetError::DimensionMismatch {
            channel: channel.to_string(),
            case_id: case_id.to_string(),
            expected,
            found: m.dim(),
        });
    }
    if !m.all_finite() {
        return Err(DatasetError::NonFiniteEmbedding {
            case_id: case_id.to_string(),
            channel: channel.to_string(),
        });
    }
    Ok(())
}

fn fingerprint(name: &str, channels: &[String], cases: &BTreeMap<String, CaseRecord>) -> String {
    let mut h = Sha256::new();
    let mut field = |bytes: &[u8]| {
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    };
    field(name.as_bytes());
    for c in channels {
        field(c.as_bytes());
    }
    for case in cases.values() {
        field(case.case_id.as_bytes());
        for v in [case.params.p_static, case.params.t_static, case.params.h2o] {
            field(&v.to_le_bytes());
        }
        for (channel, data) in &case.channels {
            field(channel.as_bytes());
            for frame in &data.frames {
                field(&frame.t_index.to_le_bytes());
                field(&frame.time_ms.to_le_bytes());
                field(frame.image_path.as_bytes());
            }
            field(&(data.embeddings.dim() as u64).to_le_bytes());
            let bytes: Vec<u8> = data
                .embeddings
                .as_slice()
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect();
            field(&bytes);
        }
    }
    hex::encode(h.finalize())
}
