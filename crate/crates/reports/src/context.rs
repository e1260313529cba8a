use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tfv_core::{ClusterModel, FrameKey};
use thiserror::Error;

use crate::annotation::AnnotationRecord;

#[derive(Debug, Error, PartialEq)]
pub enum ContextError {
    #[error("no cluster of this clustering has an annotation yet")]
    NoAnnotatedCentroids,
    #[error("k must be >= 1")]
    InvalidK,
}

/// An annotated centroid chosen as prompt context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextItem {
    pub cluster_id: i32,
    pub centroid: FrameKey,
    pub annotation: String,
    pub annotation_version: u32,
    pub distance: f64,
}

/// The `k` annotated centroids closest to `coord`, ascending by Euclidean
/// distance with ties broken by cluster id.
pub fn nearest_annotated_centroids(
    model: &ClusterModel,
    annotations: &BTreeMap<i32, AnnotationRecord>,
    coord: [f64; 2],
    k: usize,
) -> Result<Vec<ContextItem>, ContextError> {
    if k == 0 {
        return Err(ContextError::InvalidK);
    }
    let mut items: Vec<ContextItem> = model
        .centroids
        .iter()
        .filter_map(|c| {
            let ann = annotations.get(&c.cluster_id)?;
            Some(ContextItem {
                cluster_id: c.cluster_id,
                centroid: c.frame.clone(),
                annotation: ann.text.clone(),
                annotation_version: ann.version,
                distance: ((c.coord[0] - coord[0]).powi(2) + (c.coord[1] - coord[1]).powi(2)).sqrt(),
            })
        })
        .collect();
    if items.is_empty() {
        return Err(ContextError::NoAnnotatedCentroids);
    }
    items.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.cluster_id.cmp(&b.cluster_id)));
    items.truncate(k);
    Ok(items)
}
