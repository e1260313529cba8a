//! Frame, transition and case report generation with full provenance.

use std::sync::Arc;

use chrono::Utc;
use futures::future::try_join_all;
use tfv_core::{ClusterModel, Dataset, FrameKey, ProjectionResult};
use thiserror::Error;

use crate::annotation::{AnnotationStore, ClusterKey};
use crate::context::{nearest_annotated_centroids, ContextError, ContextItem};
use crate::log::LogError;
use crate::prompt::{self, subsample_indices, Prompt, CASE_MAX_IMAGES};
use crate::report::{report_id, ContextRef, Report, ReportKind, ReportStore, ReportTarget, SourceRef, Transition};
use crate::vlm::{media_type, ImageSource, Vlm, VlmError};

/// Default number of annotated centroids used as context.
pub const DEFAULT_CONTEXT_K: usize = 3;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("frame {0} is not part of the projection")]
    UnknownFrame(FrameKey),
    #[error("case {0} is not part of the projection")]
    UnknownCase(String),
    #[error("case {case_id} has no transition at t_index {t_index}")]
    UnknownTransition { case_id: String, t_index: u32 },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Vlm(#[from] VlmError),
    #[error(transparent)]
    Store(#[from] LogError),
    #[error("provenance of report {report_id} is incomplete: {message}")]
    MissingProvenance { report_id: String, message: String },
}

/// Serves prompt images from the dataset's frame listing.
pub struct DatasetImages<'a>(pub &'a Dataset);

impl ImageSource for DatasetImages<'_> {
    fn load(&self, frame: &FrameKey, channel: &str) -> Result<(Vec<u8>, &'static str), VlmError> {
        let err = |message: String| VlmError::Image {
            frame: frame.clone(),
            channel: channel.to_string(),
            message,
        };
        let path = self
            .0
            .image_path(&frame.case_id, channel, frame.t_index)
            .ok_or_else(|| err("frame not in dataset".into()))?;
        let bytes = std::fs::read(&path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Ok((bytes, media_type(&path)))
    }
}

/// The projection and clustering a report is generated against.
#[derive(Clone, Copy)]
pub struct LatentView<'a> {
    pub projection: &'a ProjectionResult,
    pub model: &'a ClusterModel,
}

impl LatentView<'_> {
    fn channel(&self) -> &str {
        &self.projection.spec.channel
    }

    fn clustering_id(&self) -> String {
        self.model.params.clustering_id()
    }

    fn coord(&self, frame: &FrameKey) -> Result<[f64; 2], ReportError> {
        self.projection
            .coord(frame)
            .ok_or_else(|| ReportError::UnknownFrame(frame.clone()))
    }

    fn case_frames(&self, case_id: &str) -> Vec<u32> {
        self.projection
            .coords
            .keys()
            .filter(|k| k.case_id == case_id)
            .map(|k| k.t_index)
            .collect()
    }
}

fn to_refs(items: &[ContextItem]) -> Vec<ContextRef> {
    items
        .iter()
        .map(|c| ContextRef {
            cluster_id: c.cluster_id,
            centroid: c.centroid.clone(),
            distance: c.distance,
            annotation_version: c.annotation_version,
        })
        .collect()
}

/// Provenance beyond the context centroids.
#[derive(Default)]
struct Extra {
    source_reports: Vec<SourceRef>,
    image_frames: Vec<u32>,
    transition: Option<Transition>,
}

pub struct ReportEngine {
    dataset: Arc<Dataset>,
    annotations: Arc<AnnotationStore>,
    reports: Arc<ReportStore>,
    vlm: Arc<Vlm>,
}

impl ReportEngine {
    pub fn new(
        dataset: Arc<Dataset>,
        annotations: Arc<AnnotationStore>,
        reports: Arc<ReportStore>,
        vlm: Arc<Vlm>,
    ) -> Self {
        Self {
            dataset,
            annotations,
            reports,
            vlm,
        }
    }

    pub fn annotations(&self) -> &AnnotationStore {
        &self.annotations
    }

    pub fn reports(&self) -> &ReportStore {
        &self.reports
    }

    pub fn vlm(&self) -> &Vlm {
        &self.vlm
    }

    fn context(&self, view: LatentView<'_>, coord: [f64; 2], k: usize) -> Result<Vec<ContextItem>, ReportError> {
        let annotated = self.annotations.for_model(view.model);
        Ok(nearest_annotated_centroids(view.model, &annotated, coord, k)?)
    }

    /// Prompt and context for a frame report, without calling the model.
    pub fn frame_prompt(
        &self,
        view: LatentView<'_>,
        frame: &FrameKey,
        k: usize,
    ) -> Result<(Prompt, Vec<ContextItem>), ReportError> {
        let context = self.context(view, view.coord(frame)?, k)?;
        Ok((prompt::frame_prompt(view.channel(), &context, frame), context))
    }

    async fn run(
        &self,
        view: LatentView<'_>,
        kind: ReportKind,
        target: ReportTarget,
        prompt: &Prompt,
        context: &[ContextItem],
        extra: Extra,
    ) -> Result<(Report, u32), ReportError> {
        let text = self.vlm.complete(prompt, &DatasetImages(&self.dataset)).await?;
        let clustering_id = view.clustering_id();
        let report = Report {
            report_id: report_id(kind, &clustering_id, view.channel(), &target),
            kind,
            clustering_id,
            channel: view.channel().to_string(),
            target,
            text,
            context_refs: to_refs(context),
            source_reports: extra.source_reports,
            image_frames: extra.image_frames,
            transition: extra.transition,
            model_id: self.vlm.model_id().to_string(),
            template_version: prompt.template_version.clone(),
            prompt_digest: prompt.digest(),
            generated_at: Utc::now(),
            edited: false,
        };
        let revision = self.reports.put(&report)?;
        Ok((report, revision))
    }

    pub async fn generate_frame_report(
        &self,
        view: LatentView<'_>,
        frame: &FrameKey,
        k: usize,
    ) -> Result<Report, ReportError> {
        Ok(self.frame_report_revision(view, frame, k).await?.0)
    }

    async fn frame_report_revision(
        &self,
        view: LatentView<'_>,
        frame: &FrameKey,
        k: usize,
    ) -> Result<(Report, u32), ReportError> {
        let (prompt, context) = self.frame_prompt(view, frame, k)?;
        tracing::info!(frame = %frame, context = context.len(), "generating frame report");
        self.run(view, ReportKind::Frame, ReportTarget::frame(frame), &prompt, &context, Extra::default())
            .await
    }

    /// Report on the change between frame `t_index - 1` and `t_index`, with
    /// context chosen around the midpoint of the two frames.
    pub async fn generate_transition_report(
        &self,
        view: LatentView<'_>,
        case_id: &str,
        transition: &Transition,
        k: usize,
    ) -> Result<Report, ReportError> {
        let missing = || ReportError::UnknownTransition {
            case_id: case_id.to_string(),
            t_index: transition.t_index,
        };
        let before_t = transition.t_index.checked_sub(1).ok_or_else(missing)?;
        let before = FrameKey::new(case_id, before_t);
        let after = FrameKey::new(case_id, transition.t_index);
        let (a, b) = (view.coord(&before)?, view.coord(&after)?);
        let labels = (view.model.label(&before), view.model.label(&after));
        if labels != (Some(transition.from_cluster), Some(transition.to_cluster)) {
            return Err(missing());
        }
        let context = self.context(view, [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0], k)?;
        let prompt = prompt::transition_prompt(
            view.channel(),
            &context,
            &before,
            &after,
            transition.from_cluster,
            transition.to_cluster,
        );
        let extra = Extra {
            transition: Some(*transition),
            ..Extra::default()
        };
        let target = ReportTarget::frame(&after);
        let (report, _) = self
            .run(view, ReportKind::Transition, target, &prompt, &context, extra)
            .await?;
        Ok(report)
    }

    /// Case overview built from every frame report of the case (generating
    /// the missing ones first) and up to twelve frame images.
    pub async fn generate_case_summary(
        &self,
        view: LatentView<'_>,
        case_id: &str,
        k: usize,
    ) -> Result<Report, ReportError> {
        let frames = view.case_frames(case_id);
        if frames.is_empty() {
            return Err(ReportError::UnknownCase(case_id.to_string()));
        }
        let clustering_id = view.clustering_id();
        let sources = try_join_all(frames.iter().map(|t| {
            let frame = FrameKey::new(case_id, *t);
            let id = report_id(ReportKind::Frame, &clustering_id, view.channel(), &ReportTarget::frame(&frame));
            async move {
                let stored = self.reports.revision_count(&id);
                let (report, revision) = match stored {
                    0 => self.frame_report_revision(view, &frame, k).await?,
                    n => (self.reports.revision(&id, n).expect("revision exists"), n),
                };
                Ok::<_, ReportError>((report, revision))
            }
        }))
        .await?;

        let image_frames: Vec<u32> = subsample_indices(frames.len(), CASE_MAX_IMAGES)
            .into_iter()
            .map(|i| frames[i])
            .collect();
        let texts: Vec<(u32, String)> = frames
            .iter()
            .zip(&sources)
            .map(|(t, (r, _))| (*t, r.text.clone()))
            .collect();
        let prompt = prompt::case_prompt(view.channel(), case_id, &image_frames, &texts);
        tracing::info!(case_id, images = image_frames.len(), reports = texts.len(), "generating case summary");
        let extra = Extra {
            source_reports: frames
                .iter()
                .zip(&sources)
                .map(|(t, (r, rev))| SourceRef {
                    report_id: r.report_id.clone(),
                    t_index: *t,
                    revision: *rev,
                })
                .collect(),
            image_frames,
            transition: None,
        };
        let (report, _) = self
            .run(view, ReportKind::Case, ReportTarget::case(case_id), &prompt, &[], extra)
            .await?;
        Ok(report)
    }

    /// Rebuilds the prompt a stored report was generated from, using only
    /// its provenance and the annotation and report stores.
    pub fn reassemble_prompt(&self, report: &Report) -> Result<Prompt, ReportError> {
        let missing = |message: String| ReportError::MissingProvenance {
            report_id: report.report_id.clone(),
            message,
        };
        let mut context = Vec::with_capacity(report.context_refs.len());
        for r in &report.context_refs {
            let key = ClusterKey::new(report.clustering_id.clone(), r.cluster_id);
            let ann = self
                .annotations
                .version(&key, r.annotation_version)
                .ok_or_else(|| missing(format!("annotation {}/{} v{}", key.clustering_id, r.cluster_id, r.annotation_version)))?;
            context.push(ContextItem {
                cluster_id: r.cluster_id,
                centroid: r.centroid.clone(),
                annotation: ann.text,
                annotation_version: r.annotation_version,
                distance: r.distance,
            });
        }
        let case_id = &report.target.case_id;
        match report.kind {
            ReportKind::Frame => {
                let t = report.target.t_index.ok_or_else(|| missing("frame target without t_index".into()))?;
                Ok(prompt::frame_prompt(&report.channel, &context, &FrameKey::new(case_id.as_str(), t)))
            }
            ReportKind::Transition => {
                let tr = report.transition.ok_or_else(|| missing("transition details absent".into()))?;
                let before = tr.t_index.checked_sub(1).ok_or_else(|| missing("transition at t=0".into()))?;
                Ok(prompt::transition_prompt(
                    &report.channel,
                    &context,
                    &FrameKey::new(case_id.as_str(), before),
                    &FrameKey::new(case_id.as_str(), tr.t_index),
                    tr.from_cluster,
                    tr.to_cluster,
                ))
            }
            ReportKind::Case => {
                let mut texts = Vec::with_capacity(report.source_reports.len());
                for s in &report.source_reports {
                    let src = self
                        .reports
                        .revision(&s.report_id, s.revision)
                        .ok_or_else(|| missing(format!("frame report {} r{}", s.report_id, s.revision)))?;
                    texts.push((s.t_index, src.text));
                }
                Ok(prompt::case_prompt(&report.channel, case_id, &report.image_frames, &texts))
            }
        }
    }
}
