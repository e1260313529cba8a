//! Versioned prompt templates. A [`Prompt`] names images by frame rather
//! than embedding their bytes, so prompts can be compared, hashed and rebuilt
//! from stored provenance.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tfv_core::FrameKey;

use crate::context::ContextItem;

pub const TEMPLATE_VERSION: &str = "v1";

pub const SYSTEM_PROMPT: &str = "You are an expert in scramjet combustion analysis. Describe flow-field frames using the terminology of the provided expert-annotated examples. Be concise and physically precise.";

pub const FRAME_INSTRUCTION: &str =
    "Describe this frame's combustion state, referencing surge position, flame structure, and combustion mode.";

pub const CASE_INSTRUCTION: &str = "Summarize how this case's combustion state evolves over time, referencing surge position, flame structure, combustion mode, and any mode transitions.";

/// Most images sent in one case-summary request.
pub const CASE_MAX_IMAGES: usize = 12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PromptPart {
    Text { text: String },
    Image { frame: FrameKey, channel: String },
}

impl PromptPart {
    fn text(text: impl Into<String>) -> Self {
        Self::Text { text: text.into() }
    }

    fn image(frame: &FrameKey, channel: &str) -> Self {
        Self::Image {
            frame: frame.clone(),
            channel: channel.to_string(),
        }
    }
}

/// A system message plus one multimodal user message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub template_version: String,
    pub system: String,
    pub parts: Vec<PromptPart>,
}

impl Prompt {
    fn new(parts: Vec<PromptPart>) -> Self {
        Self {
            template_version: TEMPLATE_VERSION.to_string(),
            system: SYSTEM_PROMPT.to_string(),
            parts,
        }
    }

    pub fn images(&self) -> impl Iterator<Item = (&FrameKey, &str)> {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::Image { frame, channel } => Some((frame, channel.as_str())),
            PromptPart::Text { .. } => None,
        })
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts.iter().filter_map(|p| match p {
            PromptPart::Text { text } => Some(text.as_str()),
            PromptPart::Image { .. } => None,
        })
    }

    /// Stable plain-text rendering with images shown as placeholders.
    pub fn canonical(&self) -> String {
        let mut out = format!("template: {}\nsystem: {}\n", self.template_version, self.system);
        for part in &self.parts {
            match part {
                PromptPart::Text { text } => {
                    out.push_str("text: ");
                    out.push_str(text);
                }
                PromptPart::Image { frame, channel } => {
                    out.push_str(&format!("image: {frame} [{channel}]"));
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn context_parts(channel: &str, context: &[ContextItem]) -> Vec<PromptPart> {
    let mut parts = Vec::with_capacity(2 * context.len() + 2);
    for (i, item) in context.iter().enumerate() {
        parts.push(PromptPart::image(&item.centroid, channel));
        parts.push(PromptPart::text(format!(
            "Expert annotation {} (latent distance {:.4}): {}",
            i + 1,
            item.distance,
            item.annotation
        )));
    }
    parts
}

/// Context centroids in the given (ascending distance) order, then the
/// target frame.
pub fn frame_prompt(channel: &str, context: &[ContextItem], target: &FrameKey) -> Prompt {
    let mut parts = context_parts(channel, context);
    parts.push(PromptPart::image(target, channel));
    parts.push(PromptPart::text(FRAME_INSTRUCTION));
    Prompt::new(parts)
}

/// Same layout as [`frame_prompt`] with both frames bracketing a cluster
/// change as targets.
pub fn transition_prompt(
    channel: &str,
    context: &[ContextItem],
    before: &FrameKey,
    after: &FrameKey,
    from_cluster: i32,
    to_cluster: i32,
) -> Prompt {
    let mut parts = context_parts(channel, context);
    parts.push(PromptPart::image(before, channel));
    parts.push(PromptPart::image(after, channel));
    parts.push(PromptPart::text(format!(
        "These two consecutive frames bracket a change from cluster {from_cluster} to cluster {to_cluster}. \
         Describe how the combustion state changes between them, referencing surge position, flame structure, \
         and combustion mode."
    )));
    Prompt::new(parts)
}

/// Case-level prompt: the selected frame images, then every frame report in
/// chronological order.
pub fn case_prompt(channel: &str, case_id: &str, image_frames: &[u32], frame_reports: &[(u32, String)]) -> Prompt {
    let mut parts = Vec::with_capacity(2 * image_frames.len() + frame_reports.len() + 1);
    for t in image_frames {
        parts.push(PromptPart::image(&FrameKey::new(case_id, *t), channel));
        parts.push(PromptPart::text(format!("Frame t={t}")));
    }
    for (t, text) in frame_reports {
        parts.push(PromptPart::text(format!("Frame report t={t}: {text}")));
    }
    parts.push(PromptPart::text(CASE_INSTRUCTION));
    Prompt::new(parts)
}

/// Up to `n_max` (at least 2) indices out of `0..n` at uniform stride,
/// always keeping the first and the last.
pub fn subsample_indices(n: usize, n_max: usize) -> Vec<usize> {
    let n_max = n_max.max(2);
    if n <= n_max {
        return (0..n).collect();
    }
    (0..n_max).map(|i| i * (n - 1) / (n_max - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(cluster_id: i32, distance: f64, text: &str) -> ContextItem {
        ContextItem {
            cluster_id,
            centroid: FrameKey::new(format!("case_{cluster_id:03}"), 2),
            annotation: text.into(),
            annotation_version: 1,
            distance,
        }
    }

    #[test]
    fn frame_prompt_golden() {
        let ctx = [
            item(2, 0.25, "stable scramjet combustion"),
            item(0, 1.5, "ramjet mode, surge in isolator"),
            item(1, 3.0, "jet-wake flame"),
        ];
        let p = frame_prompt("pressure", &ctx, &FrameKey::new("case_007", 11));
        let want = "\
template: v1
system: You are an expert in scramjet combustion analysis. Describe flow-field frames using the terminology of the provided expert-annotated examples. Be concise and physically precise.
image: case_002@2 [pressure]
text: Expert annotation 1 (latent distance 0.2500): stable scramjet combustion
image: case_000@2 [pressure]
text: Expert annotation 2 (latent distance 1.5000): ramjet mode, surge in isolator
image: case_001@2 [pressure]
text: Expert annotation 3 (latent distance 3.0000): jet-wake flame
image: case_007@11 [pressure]
text: Describe this frame's combustion state, referencing surge position, flame structure, and combustion mode.
";
        assert_eq!(p.canonical(), want);
        assert_eq!(p.images().count(), 4);
    }

    #[test]
    fn stride_for_forty_frames() {
        assert_eq!(
            subsample_indices(40, CASE_MAX_IMAGES),
            vec![0, 3, 7, 10, 14, 17, 21, 24, 28, 31, 35, 39]
        );
    }

    #[test]
    fn short_cases_keep_every_frame() {
        assert_eq!(subsample_indices(3, CASE_MAX_IMAGES), vec![0, 1, 2]);
        assert_eq!(subsample_indices(12, CASE_MAX_IMAGES), (0..12).collect::<Vec<_>>());
        assert!(subsample_indices(0, CASE_MAX_IMAGES).is_empty());
    }

    #[test]
    fn stride_enumeration() {
        for n in 1..200 {
            let idx = subsample_indices(n, CASE_MAX_IMAGES);
            assert_eq!(idx.len(), n.min(CASE_MAX_IMAGES));
            assert_eq!(idx[0], 0);
            assert_eq!(*idx.last().unwrap(), n - 1);
            assert!(idx.windows(2).all(|w| w[0] < w[1]), "n={n}: {idx:?}");
            if n > CASE_MAX_IMAGES {
                // gaps differ by at most one frame
                let gaps: Vec<usize> = idx.windows(2).map(|w| w[1] - w[0]).collect();
                assert!(gaps.iter().max().unwrap() - gaps.iter().min().unwrap() <= 1, "n={n}: {gaps:?}");
            }
        }
    }

    #[test]
    fn case_prompt_orders_reports_chronologically() {
        let p = case_prompt("pressure", "c", &[0, 2], &[(0, "a".into()), (1, "b".into()), (2, "c".into())]);
        let texts: Vec<&str> = p.texts().collect();
        assert_eq!(
            texts,
            vec!["Frame t=0", "Frame t=2", "Frame report t=0: a", "Frame report t=1: b", "Frame report t=2: c", CASE_INSTRUCTION]
        );
        assert_eq!(p.images().count(), 2);
    }

    #[test]
    fn digest_tracks_content() {
        let a = frame_prompt("pressure", &[item(0, 1.0, "x")], &FrameKey::new("c", 1));
        let b = frame_prompt("pressure", &[item(0, 1.0, "y")], &FrameKey::new("c", 1));
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
