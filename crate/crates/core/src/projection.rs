//! 2D latent projections of frame embeddings.
//!
//! Two routes produce a [`ProjectionResult`]: a native PCA fit over the
//! in-scope frames, or an import of an externally computed layout (UMAP,
//! t-SNE, ...) from a `case_id,t_index,x,y` table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Dataset, FrameKey};

/// Neighbour-graph parameters used for every imported UMAP layout.
pub const UMAP_N_NEIGHBORS: u32 = 15;
pub const UMAP_MIN_DIST: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("projection scope is empty")]
    EmptyScope,
    #[error("unknown case {0}")]
    UnknownCase(String),
    #[error("case {case_id} has no channel {channel}")]
    MissingChannel { case_id: String, channel: String },
    #[error("PCA needs at least 3 frames, got {0}")]
    TooFewFrames(usize),
    #[error("PCA needs embedding dim >= 2, got {0}")]
    DimTooSmall(usize),
    #[error("external projection requires external_file")]
    MissingExternalFile,
    #[error("external projection has no coordinate for {0}")]
    MissingFrameCoordinate(FrameKey),
    #[error("external projection lists {0} more than once")]
    DuplicateRow(FrameKey),
    #[error("external projection lists {0}, which is not a frame of the in-scope case")]
    UnknownFrame(FrameKey),
    #[error("malformed projection file: {0}")]
    MalformedFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProjectionMethod {
    Pca,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub channel: String,
    pub method: ProjectionMethod,
    /// Case ids included in the fit; kept sorted and de-duplicated.
    pub scope: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub external_file: Option<PathBuf>,
    /// Provenance only, e.g. `n_neighbors=15`.
    #[serde(default)]
    pub method_params: BTreeMap<String, String>,
}

impl ProjectionSpec {
    pub fn pca(channel: impl Into<String>, scope: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self {
            channel: channel.into(),
            method: ProjectionMethod::Pca,
            scope: canonical_scope(scope),
            external_file: None,
            method_params: BTreeMap::new(),
        }
    }

    pub fn external(
        channel: impl Into<String>,
        scope: impl IntoIterator<Item = impl Into<String>>,
        file: impl Into<PathBuf>,
    ) -> Self {
        Self {
            channel: channel.into(),
            method: ProjectionMethod::External,
            scope: canonical_scope(scope),
            external_file: Some(file.into()),
            method_params: BTreeMap::new(),
        }
    }

    /// Records the fixed UMAP convention as provenance.
    pub fn with_umap_params(mut self) -> Self {
        self.method_params
            .insert("method".into(), "umap".into());
        self.method_params
            .insert("n_neighbors".into(), UMAP_N_NEIGHBORS.to_string());
        self.method_params
            .insert("min_dist".into(), UMAP_MIN_DIST.to_string());
        self
    }

    fn validate(&self) -> Result<(), ProjectionError> {
        if self.scope.is_empty() {
            return Err(ProjectionError::EmptyScope);
        }
        match (self.method, &self.external_file) {
            (ProjectionMethod::External, None) => Err(ProjectionError::MissingExternalFile),
            (ProjectionMethod::Pca, Some(_)) => Err(ProjectionError::MalformedFile(
                "external_file given for a pca projection".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn canonical_scope(scope: impl IntoIterator<Item = impl Into<String>>) -> Vec<String> {
    scope
        .into_iter()
        .map(Into::into)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaStats {
    /// Two leading covariance eigenvalues, descending.
    pub eigenvalues: [f64; 2],
    pub mean: Vec<f64>,
    /// Unit-norm principal axes, sign-normalised.
    pub components: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub spec: ProjectionSpec,
    #[serde(with = "coord_rows")]
    pub coords: BTreeMap<FrameKey, [f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_stats: Option<PcaStats>,
    /// Set when every embedding was identical; coords are then all zero.
    #[serde(default)]
    pub degenerate: bool,
}

impl ProjectionResult {
    pub fn coord(&self, key: &FrameKey) -> Option<[f64; 2]> {
        self.coords.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Writes the coordinates as a `case_id,t_index,x,y` table. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: io::Write>(&self, out: W) -> Result<(), ProjectionError> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| ProjectionError::MalformedFile(e.to_string());
        w.write_record(["case_id", "t_index", "x", "y"]).map_err(csv_err)?;
        for (key, [x, y]) in &self.coords {
            w.write_record([
                key.case_id.clone(),
                key.t_index.to_string(),
                x.to_string(),
                y.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|source| ProjectionError::Io {
            path: PathBuf::new(),
            source,
        })
    }
}

mod coord_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        case_id: String,
        t_index: u32,
        x: f64,
        y: f64,
    }

    pub fn serialize<S: Serializer>(
        coords: &BTreeMap<FrameKey, [f64; 2]>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        s.collect_seq(coords.iter().map(|(k, [x, y])| Row {
            case_id: k.case_id.clone(),
            t_index: k.t_index,
            x: *x,
            y: *y,
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<FrameKey, [f64; 2]>, D::Error> {
        let rows = Vec::<Row>::deserialize(d)?;
        Ok(rows
            .into_iter()
            .map(|r| (FrameKey::new(r.case_id, r.t_index), [r.x, r.y]))
            .collect())
    }
}

/// Every frame key of the scope, ascending, after checking that each case
/// exists and carries the channel.
fn scope_frames(
    dataset: &Dataset,
    channel: &str,
    scope: &[String],
) -> Result<Vec<FrameKey>, ProjectionError> {
    let mut keys = Vec::new();
    for case_id in scope {
        let case = dataset
            .case(case_id)
            .ok_or_else(|| ProjectionError::UnknownCase(case_id.clone()))?;
        let ch = case
            .channel(channel)
            .ok_or_else(|| ProjectionError::MissingChannel {
                case_id: case_id.clone(),
                channel: channel.to_string(),
            })?;
        keys.extend(ch.frames.iter().map(|f| FrameKey::new(case_id.clone(), f.t_index)));
    }
    Ok(keys)
}

/// Projects the centred embeddings of `scope` onto their two leading
/// principal axes.
///
/// Axes come from a dense symmetric eigendecomposition of the sample
/// covariance (denominator `n - 1`). Each axis is flipped so that its entry
/// of largest magnitude is non-negative, ties going to the lowest index.
pub fn fit_pca_2d(
    dataset: &Dataset,
    channel: &str,
    scope: &[String],
) -> Result<ProjectionResult, ProjectionError> {
    let spec = ProjectionSpec::pca(channel, scope.iter().cloned());
    spec.validate()?;
    let keys = scope_frames(dataset, channel, &spec.scope)?;
    let n = keys.len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for case_id in &spec.scope {
        let ch = dataset.case(case_id).and_then(|c| c.channel(channel)).expect("validated");
        rows.extend(ch.embeddings.rows().map(|r| r.iter().map(|v| f64::from(*v)).collect::<Vec<_>>()));
    }
    let fit = pca_rows(&rows)?;
    Ok(ProjectionResult {
        spec,
        coords: keys.into_iter().zip(fit.coords).collect(),
        fit_stats: Some(fit.stats),
        degenerate: fit.degenerate,
    })
}

/// Output of [`pca_rows`]: coordinates in input row order.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaFit {
    pub stats: PcaStats,
    pub coords: Vec<[f64; 2]>,
    pub degenerate: bool,
}

/// PCA on raw `f64` rows (all of equal length). See [`fit_pca_2d`].
pub fn pca_rows(rows: &[Vec<f64>]) -> Result<PcaFit, ProjectionError> {
    let n = rows.len();
    if n < 3 {
        return Err(ProjectionError::TooFewFrames(n));
    }
    let dim = rows[0].len();
    if dim < 2 {
        return Err(ProjectionError::DimTooSmall(dim));
    }

    let mut mean = vec![0.0f64; dim];
    for row in rows {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    if rows.iter().all(|r| *r == rows[0]) {
        let mut e0 = vec![0.0; dim];
        let mut e1 = vec![0.0; dim];
        e0[0] = 1.0;
        e1[1] = 1.0;
        return Ok(PcaFit {
            stats: PcaStats {
                eigenvalues: [0.0, 0.0],
                mean,
                components: [e0, e1],
            },
            coords: vec![[0.0, 0.0]; n],
            degenerate: true,
        });
    }

    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let mut cov = centered.transpose() * &centered;
    cov /= (n - 1) as f64;
    // Exact symmetry for the solver.
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |idx: usize| -> Vec<f64> {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        orient(&mut v);
        v
    };
    let components = [axis(order[0]), axis(order[1])];
    let eigenvalues = [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]];

    let coords = (0..n)
        .map(|i| {
            let row = centered.row(i);
            let x = row.iter().zip(&components[0]).map(|(a, b)| a * b).sum();
            let y = row.iter().zip(&components[1]).map(|(a, b)| a * b).sum();
            [x, y]
        })
        .collect();

    Ok(PcaFit {
        stats: PcaStats {
            eigenvalues,
            mean,
            components,
        },
        coords,
        degenerate: false,
    })
}

/// Flips `v` so that its largest-magnitude entry (lowest index on ties) is
/// non-negative.
pub fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|x| *x < 0.0) {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

#[derive(Debug, Deserialize)]
struct ExternalRow {
    case_id: String,
    t_index: u32,
    x: f64,
    y: f64,
}

/// Parses a `case_id,t_index,x,y` table into raw rows, keeping file order.
fn parse_external<R: io::Read>(reader: R) -> Result<Vec<ExternalRow>, ProjectionError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ProjectionError::MalformedFile(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["case_id", "t_index", "x", "y"] {
        return Err(ProjectionError::MalformedFile(format!(
            "expected header case_id,t_index,x,y, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ExternalRow>() {
        let row = rec.map_err(|e| ProjectionError::MalformedFile(e.to_string()))?;
        if !row.x.is_finite() || !row.y.is_finite() {
            return Err(ProjectionError::MalformedFile(format!(
                "non-finite coordinate for {}@{}",
                row.case_id, row.t_index
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Imports an externally computed 2D layout, requiring it to cover every
/// in-scope frame exactly once and nothing else.
pub fn import_external_projection(
    dataset: &Dataset,
    channel: &str,
    scope: &[String],
    file: &Path,
) -> Result<ProjectionResult, ProjectionError> {
    let spec = ProjectionSpec::external(channel, scope.iter().cloned(), file);
    let reader = fs::File::open(file).map_err(|source| ProjectionError::Io {
        path: file.to_path_buf(),
        source,
    })?;
    import_from_reader(dataset, spec, reader)
}

pub fn import_from_reader<R: io::Read>(
    dataset: &Dataset,
    spec: ProjectionSpec,
    reader: R,
) -> Result<ProjectionResult, ProjectionError> {
    spec.validate()?;
    let expected: BTreeSet<FrameKey> = scope_frames(dataset, &spec.channel, &spec.scope)?
        .into_iter()
        .collect();
    let in_scope: BTreeSet<&str> = spec.scope.iter().map(String::as_str).collect();

    let mut coords = BTreeMap::new();
    for row in parse_external(reader)? {
        if !in_scope.contains(row.case_id.as_str()) {
            return Err(ProjectionError::UnknownCase(row.case_id));
        }
        let key = FrameKey::new(row.case_id, row.t_index);
        if !expected.contains(&key) {
            return Err(ProjectionError::UnknownFrame(key));
        }
        if coords.insert(key.clone(), [row.x, row.y]).is_some() {
            return Err(ProjectionError::DuplicateRow(key));
        }
    }
    if let Some(missing) = expected.into_iter().find(|k| !coords.contains_key(k)) {
        return Err(ProjectionError::MissingFrameCoordinate(missing));
    }
    Ok(ProjectionResult {
        spec,
        coords,
        fit_stats: None,
        degenerate: false,
    })
}

/// Content-derived identifier of a projection: covers the dataset content, the
/// canonical spec and, for imports, the bytes of the external file.
pub fn projection_id(dataset: &Dataset, spec: &ProjectionSpec) -> Result<String, ProjectionError> {
    let mut h = Sha256::new();
    h.update(b"tfv-projection-v1\0");
    h.update(dataset.fingerprint().as_bytes());
    let canonical = serde_json::to_vec(&(
        &spec.channel,
        spec.method,
        canonical_scope(spec.scope.iter().cloned()),
        &spec.method_params,
    ))
    .expect("spec serialises");
    h.update((canonical.len() as u64).to_le_bytes());
    h.update(&canonical);
    if let Some(path) = &spec.external_file {
        let bytes = fs::read(path).map_err(|source| ProjectionError::Io {
            path: path.clone(),
            source,
        })?;
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize())[..32].to_string())
}
