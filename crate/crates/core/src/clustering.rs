//! DBSCAN over projected 2D coordinates, plus representative-frame
//! selection per cluster.
//!
//! Conventions:
//! - the eps-neighbourhood is the closed ball `dist <= eps` and includes the
//!   point itself when counting towards `min_samples`;
//! - points are scanned in ascending `(case_id, t_index)` order and cluster
//!   ids follow discovery order;
//! - a border point reachable from several clusters keeps the first one that
//!   reaches it.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::FrameKey;
use crate::projection::ProjectionResult;

pub const NOISE: i32 = -1;

#[derive(Debug, Error, PartialEq)]
pub enum ClusteringError {
    #[error("eps must be finite and > 0, got {0}")]
    InvalidEps(f64),
    #[error("min_samples must be >= 1")]
    InvalidMinSamples,
    #[error("projection is empty")]
    EmptyProjection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringParams {
    pub eps: f64,
    pub min_samples: usize,
    /// Id of the projection the labels refer to.
    pub projection_id: String,
}

impl ClusteringParams {
    pub fn validate(&self) -> Result<(), ClusteringError> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(ClusteringError::InvalidEps(self.eps));
        }
        if self.min_samples == 0 {
            return Err(ClusteringError::InvalidMinSamples);
        }
        Ok(())
    }

    /// Content hash of the parameters; stable across runs and processes.
    pub fn clustering_id(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"tfv-clustering-v1\0");
        h.update(self.projection_id.as_bytes());
        h.update([0]);
        h.update(self.eps.to_bits().to_le_bytes());
        h.update((self.min_samples as u64).to_le_bytes());
        hex::encode(h.finalize())[..32].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub cluster_id: i32,
    pub frame: FrameKey,
    pub coord: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub params: ClusteringParams,
    #[serde(with = "label_rows")]
    pub labels: BTreeMap<FrameKey, i32>,
    /// One entry per cluster, ascending cluster id. Empty until
    /// [`select_centroids`] runs.
    pub centroids: Vec<Centroid>,
}

impl ClusterModel {
    pub fn n_clusters(&self) -> usize {
        self.labels
            .values()
            .copied()
            .max()
            .map_or(0, |m| (m + 1).max(0) as usize)
    }

    pub fn label(&self, key: &FrameKey) -> Option<i32> {
        self.labels.get(key).copied()
    }

    pub fn centroid(&self, cluster_id: i32) -> Option<&Centroid> {
        self.centroids.iter().find(|c| c.cluster_id == cluster_id)
    }

    /// Labels of one case in chronological order.
    pub fn case_labels(&self, case_id: &str) -> Vec<(u32, i32)> {
        let start = FrameKey::new(case_id, 0);
        self.labels
            .range(start..)
            .take_while(|(k, _)| k.case_id == case_id)
            .map(|(k, l)| (k.t_index, *l))
            .collect()
    }

    /// `case_id,t_index,label` table.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("case_id,t_index,label\n");
        for (k, l) in &self.labels {
            out.push_str(&format!("{},{},{}\n", k.case_id, k.t_index, l));
        }
        out
    }

    /// `cluster_id,case_id,t_index,x,y` table.
    pub fn centroids_csv(&self) -> String {
        let mut out = String::from("cluster_id,case_id,t_index,x,y\n");
        for c in &self.centroids {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.cluster_id, c.frame.case_id, c.frame.t_index, c.coord[0], c.coord[1]
            ));
        }
        out
    }
}

mod label_rows {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Row {
        case_id: String,
        t_index: u32,
        label: i32,
    }

    pub fn serialize<S: Serializer>(labels: &BTreeMap<FrameKey, i32>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(labels.iter().map(|(k, l)| Row {
            case_id: k.case_id.clone(),
            t_index: k.t_index,
            label: *l,
        }))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<FrameKey, i32>, D::Error> {
        Ok(Vec::<Row>::deserialize(d)?
            .into_iter()
            .map(|r| (FrameKey::new(r.case_id, r.t_index), r.label))
            .collect())
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (dx * dx + dy * dy).sqrt()
}

/// Labels `points` (already in scan order). Returns `-1` for noise and
/// `0..k` for clusters in discovery order.
pub fn dbscan_points(points: &[[f64; 2]], eps: f64, min_samples: usize) -> Vec<i32> {
    const UNVISITED: i32 = i32::MIN;
    let region = |i: usize| -> Vec<usize> {
        (0..points.len())
            .filter(|&j| dist(points[i], points[j]) <= eps)
            .collect()
    };

    let mut labels = vec![UNVISITED; points.len()];
    let mut next_cluster = 0;
    for i in 0..points.len() {
        if labels[i] != UNVISITED {
            continue;
        }
        let neighbours = region(i);
        if neighbours.len() < min_samples {
            labels[i] = NOISE;
            continue;
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[i] = cluster;
        let mut queue: VecDeque<usize> = neighbours.into();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                NOISE => labels[j] = cluster,
                UNVISITED => {
                    labels[j] = cluster;
                    let nb = region(j);
                    if nb.len() >= min_samples {
                        queue.extend(nb.into_iter().filter(|&q| labels[q] == UNVISITED || labels[q] == NOISE));
                    }
                }
                _ => {}
            }
        }
    }
    labels
}

/// Runs DBSCAN over every frame of `projection`. Centroids are left empty.
pub fn dbscan(projection: &ProjectionResult, params: ClusteringParams) -> Result<ClusterModel, ClusteringError> {
    params.validate()?;
    if projection.is_empty() {
        return Err(ClusteringError::EmptyProjection);
    }
    let points: Vec<[f64; 2]> = projection.coords.values().copied().collect();
    let labels = dbscan_points(&points, params.eps, params.min_samples);
    Ok(ClusterModel {
        params,
        labels: projection.coords.keys().cloned().zip(labels).collect(),
        centroids: Vec::new(),
    })
}

/// For each cluster, picks the member closest to the mean of the members'
/// coordinates. Ties go to the smallest `(case_id, t_index)`.
pub fn select_centroids(mut model: ClusterModel, projection: &ProjectionResult) -> ClusterModel {
    let mut members: BTreeMap<i32, Vec<(&FrameKey, [f64; 2])>> = BTreeMap::new();
    for (key, label) in &model.labels {
        if *label == NOISE {
            continue;
        }
        if let Some(c) = projection.coord(key) {
            members.entry(*label).or_default().push((key, c));
        }
    }
    model.centroids = members
        .into_iter()
        .map(|(cluster_id, pts)| {
            let n = pts.len() as f64;
            let (sx, sy) = pts.iter().fold((0.0, 0.0), |(sx, sy), (_, c)| (sx + c[0], sy + c[1]));
            let mean = [sx / n, sy / n];
            // members are in ascending key order, so strict < keeps the first on ties
            let mut best = 0;
            let mut best_d = dist(pts[0].1, mean);
            for (i, (_, c)) in pts.iter().enumerate().skip(1) {
                let d = dist(*c, mean);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            Centroid {
                cluster_id,
                frame: pts[best].0.clone(),
                coord: pts[best].1,
            }
        })
        .collect();
    model
}

/// [`dbscan`] followed by [`select_centroids`].
pub fn cluster(projection: &ProjectionResult, params: ClusteringParams) -> Result<ClusterModel, ClusteringError> {
    Ok(select_centroids(dbscan(projection, params)?, projection))
}
