//! Synthetic datasets with known ground truth.
//!
//! Each case follows a latent path in a `signal_dim`-dimensional space whose
//! shape is set by its regime:
//!
//! - `converging`: geometric approach to an anchor, step norms shrink by a
//!   constant ratio;
//! - `oscillatory`: the same approach plus a small circular orbit;
//! - `diverging`: steps along a fixed direction that grow geometrically;
//! - `transitioning`: converges to one anchor, then switches to a second one
//!   at a recorded frame index.
//!
//! Isotropic noise of scale `signal_noise` is added to every coordinate. With
//! `variant_pair`, a second channel `<channel>_uncropped` carries the same
//! signal coordinates followed by `noise_dim` pure-noise coordinates of scale
//! `dilution_noise`.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    CaseParams, CaseRecord, ChannelData, Dataset, DatasetError, FrameRef, ManifestCase, ManifestChannel,
    ManifestDoc, H2O_RANGE_PCT, P_RANGE_MPA, T_RANGE_K,
};
use crate::embedding::{EmbeddingFileError, EmbeddingMatrix};
use crate::rng::XorShift64Star;

pub const UNCROPPED_SUFFIX: &str = "_uncropped";
pub const PNG_TEXT_KEY: &str = "tfv-frame";
const FRAME_INTERVAL_MS: f64 = 0.1;
const N_ANCHORS: usize = 4;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Embedding(#[from] EmbeddingFileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("png encoding: {0}")]
    Png(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Converging,
    Oscillatory,
    Diverging,
    Transitioning,
}

fn default_channel() -> String {
    "pressure".into()
}

fn default_name() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_name")]
    pub dataset_name: String,
    pub n_cases: usize,
    /// Inclusive `[min, max]` frame count per case.
    pub frames_per_case: [usize; 2],
    /// Regimes assigned to cases in rotation.
    pub regimes: Vec<Regime>,
    pub signal_dim: usize,
    pub noise_dim: usize,
    #[serde(default)]
    pub signal_noise: f64,
    #[serde(default)]
    pub dilution_noise: f64,
    #[serde(default = "default_channel")]
    pub channel: String,
    /// Also emit the diluted `<channel>_uncropped` channel.
    #[serde(default)]
    pub variant_pair: bool,
    /// Indices of base cases to append again under fresh ids.
    #[serde(default)]
    pub duplicates: Vec<usize>,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if self.n_cases == 0 {
            return bad("n_cases must be >= 1");
        }
        let [lo, hi] = self.frames_per_case;
        if lo == 0 || lo > hi {
            return bad("frames_per_case must satisfy 1 <= min <= max");
        }
        if self.signal_dim == 0 || self.noise_dim == 0 {
            return bad("signal_dim and noise_dim must be >= 1");
        }
        if self.regimes.is_empty() {
            return bad("at least one regime is required");
        }
        if !(self.signal_noise >= 0.0 && self.dilution_noise >= 0.0) {
            return bad("noise scales must be >= 0");
        }
        if self.channel.is_empty() || self.channel.ends_with(UNCROPPED_SUFFIX) {
            return bad("channel name must be non-empty and not end with _uncropped");
        }
        if let Some(d) = self.duplicates.iter().find(|d| **d >= self.n_cases) {
            return Err(SynthError::InvalidSpec(format!("duplicate index {d} out of range")));
        }
        Ok(())
    }

    pub fn uncropped_channel(&self) -> String {
        format!("{}{UNCROPPED_SUFFIX}", self.channel)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, SynthError> {
        let bytes = fs::read(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTruth {
    pub case_id: String,
    pub regime: Regime,
    pub n_frames: usize,
    pub anchor: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub second_anchor: Option<usize>,
    /// First frame generated under the second anchor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duplicate_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_version: u32,
    pub spec: ScenarioSpec,
    pub anchors: Vec<Vec<f64>>,
    pub cases: Vec<CaseTruth>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

pub fn case_id(i: usize) -> String {
    format!("case_{i:03}")
}

pub fn image_rel_path(case_id: &str, channel: &str, t: usize) -> String {
    format!("images/{case_id}/{channel}/{t:04}.png")
}

fn embedding_rel_path(case_id: &str, channel: &str) -> String {
    format!("embeddings/{case_id}.{channel}.tfv")
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|x| x * s).collect()
}

// Repeated multiplication; libm-free so output is platform independent.
fn pow_int(base: f64, exp: usize) -> f64 {
    (0..exp).fold(1.0, |acc, _| acc * base)
}

/// Noise-free latent path for one case.
fn latent_path(
    rng: &mut XorShift64Star,
    regime: Regime,
    n: usize,
    anchors: &[Vec<f64>],
    truth: &mut CaseTruth,
) -> Vec<Vec<f64>> {
    let dim = anchors[0].len();
    let anchor = &anchors[truth.anchor];
    let start = add(anchor, &scale(&rng.unit_vector(dim), rng.uniform(3.0, 5.0)));
    let ratio = rng.uniform(0.72, 0.85);
    let approach = |from: &[f64], to: &[f64], steps: usize| -> Vec<f64> {
        add(to, &scale(&sub(from, to), pow_int(ratio, steps)))
    };
    match regime {
        Regime::Converging => (0..n).map(|t| approach(&start, anchor, t)).collect(),
        Regime::Oscillatory => {
            let u = rng.unit_vector(dim);
            let mut v = rng.unit_vector(dim);
            let proj: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v = sub(&v, &scale(&u, proj));
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            v = scale(&v, 1.0 / vn);
            let radius = rng.uniform(0.2, 0.35);
            // rotation by angle 2*atan(w), from the rational parametrisation
            let w = rng.uniform(0.4, 0.75);
            let (cos_step, sin_step) = ((1.0 - w * w) / (1.0 + w * w), 2.0 * w / (1.0 + w * w));
            let (mut c, mut s) = (1.0, 0.0);
            let mut path = Vec::with_capacity(n);
            for t in 0..n {
                let orbit = add(&scale(&u, radius * c), &scale(&v, radius * s));
                path.push(add(&approach(&start, anchor, t), &orbit));
                (c, s) = (c * cos_step - s * sin_step, s * cos_step + c * sin_step);
            }
            path
        }
        Regime::Diverging => {
            let dir = rng.unit_vector(dim);
            let step = rng.uniform(0.15, 0.3);
            let growth = rng.uniform(1.1, 1.2);
            (0..n)
                .map(|t| add(&start, &scale(&dir, step * (pow_int(growth, t) - 1.0) / (growth - 1.0))))
                .collect()
        }
        Regime::Transitioning => {
            let second = (truth.anchor + 1 + rng.range_inclusive(0, N_ANCHORS as u64 - 2) as usize) % N_ANCHORS;
            let switch = (n / 2).max(1);
            truth.second_anchor = Some(second);
            if switch < n {
                truth.transition_index = Some(switch);
            }
            let mut path: Vec<Vec<f64>> = (0..switch.min(n)).map(|t| approach(&start, anchor, t)).collect();
            if let Some(last) = path.last().cloned() {
                for t in switch..n {
                    path.push(approach(&last, &anchors[second], t - switch + 1));
                }
            }
            path
        }
    }
}

fn case_params(rng: &mut XorShift64Star, i: usize, n: usize) -> CaseParams {
    let pick = |rng: &mut XorShift64Star, (lo, hi): (f64, f64)| -> f64 {
        if i == 0 {
            lo
        } else if i + 1 == n {
            hi
        } else {
            (rng.uniform(lo, hi) * 1000.0).round() / 1000.0
        }
    };
    CaseParams {
        p_static: pick(rng, P_RANGE_MPA),
        t_static: pick(rng, T_RANGE_K),
        h2o: pick(rng, H2O_RANGE_PCT),
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let f32_rows: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|v| *v as f32).collect()).collect();
    EmbeddingMatrix::from_rows(&f32_rows).expect("rectangular")
}

fn frames_for(case_id: &str, channel: &str, n: usize) -> Vec<FrameRef> {
    (0..n)
        .map(|t| FrameRef {
            t_index: t as u32,
            time_ms: t as f64 * FRAME_INTERVAL_MS,
            image_path: image_rel_path(case_id, channel, t),
        })
        .collect()
}

/// Generates the dataset in memory.
pub fn synthesize(spec: &ScenarioSpec) -> Result<SyntheticDataset, SynthError> {
    spec.validate()?;
    let mut rng = XorShift64Star::new(spec.seed);
    let anchors: Vec<Vec<f64>> = (0..N_ANCHORS)
        .map(|_| (0..spec.signal_dim).map(|_| rng.uniform(-4.0, 4.0)).collect())
        .collect();

    let mut channels = vec![spec.channel.clone()];
    if spec.variant_pair {
        channels.push(spec.uncropped_channel());
    }

    let mut records = Vec::new();
    let mut truths = Vec::new();
    for i in 0..spec.n_cases {
        let id = case_id(i);
        let regime = spec.regimes[i % spec.regimes.len()];
        let [lo, hi] = spec.frames_per_case;
        let n = rng.range_inclusive(lo as u64, hi as u64) as usize;
        let params = case_params(&mut rng, i, spec.n_cases);
        let mut truth = CaseTruth {
            case_id: id.clone(),
            regime,
            n_frames: n,
            anchor: rng.range_inclusive(0, N_ANCHORS as u64 - 1) as usize,
            second_anchor: None,
            transition_index: None,
            duplicate_of: None,
        };
        let signal: Vec<Vec<f64>> = latent_path(&mut rng, regime, n, &anchors, &mut truth)
            .into_iter()
            .map(|p| p.into_iter().map(|v| v + spec.signal_noise * rng.normal()).collect())
            .collect();

        let mut ch = BTreeMap::new();
        ch.insert(
            spec.channel.clone(),
            ChannelData {
                frames: frames_for(&id, &spec.channel, n),
                embeddings: to_matrix(&signal),
            },
        );
        if spec.variant_pair {
            let diluted: Vec<Vec<f64>> = signal
                .iter()
                .map(|row| {
                    let mut r = row.clone();
                    r.extend((0..spec.noise_dim).map(|_| spec.dilution_noise * rng.normal()));
                    r
                })
                .collect();
            let name = spec.uncropped_channel();
            ch.insert(
                name.clone(),
                ChannelData {
                    frames: frames_for(&id, &name, n),
                    embeddings: to_matrix(&diluted),
                },
            );
        }
        records.push(CaseRecord {
            case_id: id,
            params,
            channels: ch,
        });
        truths.push(truth);
    }

    for (j, src) in spec.duplicates.iter().enumerate() {
        let id = case_id(spec.n_cases + j);
        let mut rec = records[*src].clone();
        for (name, data) in rec.channels.iter_mut() {
            data.frames = frames_for(&id, name, data.frames.len());
        }
        rec.case_id = id.clone();
        let mut truth = truths[*src].clone();
        truth.duplicate_of = Some(truth.case_id.clone());
        truth.case_id = id;
        records.push(rec);
        truths.push(truth);
    }

    let dataset = Dataset::from_cases(spec.dataset_name.clone(), channels, records)?;
    Ok(SyntheticDataset {
        dataset,
        truth: GroundTruth {
            schema_version: 1,
            spec: spec.clone(),
            anchors,
            cases: truths,
        },
    })
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Tiny solid-colour PNG whose text chunk names the frame.
pub fn placeholder_png(case_id: &str, channel: &str, t: usize) -> Result<Vec<u8>, SynthError> {
    let label = format!("{case_id}/{channel}/{t}");
    let mut h: u32 = 0x811C_9DC5;
    for b in label.bytes() {
        h = (h ^ u32::from(b)).wrapping_mul(0x0100_0193);
    }
    let rgb = [(h >> 16) as u8, (h >> 8) as u8, h as u8];
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, 4, 4);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.add_text_chunk(PNG_TEXT_KEY.to_string(), label)
            .map_err(|e| SynthError::Png(e.to_string()))?;
        let mut w = enc.write_header().map_err(|e| SynthError::Png(e.to_string()))?;
        let pixels: Vec<u8> = rgb.iter().copied().cycle().take(4 * 4 * 3).collect();
        w.write_image_data(&pixels).map_err(|e| SynthError::Png(e.to_string()))?;
    }
    Ok(out)
}

/// Generates the dataset and writes manifest, embeddings, placeholder
/// images and `ground_truth.json` under `out_dir`.
pub fn generate(spec: &ScenarioSpec, out_dir: &Path) -> Result<SyntheticDataset, SynthError> {
    let synth = synthesize(spec)?;
    let ds = &synth.dataset;
    fs::create_dir_all(out_dir.join("embeddings")).map_err(io_err(out_dir))?;

    let mut cases = Vec::new();
    for case in ds.cases() {
        let mut channels = BTreeMap::new();
        for (name, data) in &case.channels {
            let rel = embedding_rel_path(&case.case_id, name);
            let path = out_dir.join(&rel);
            fs::write(&path, data.embeddings.to_bytes()?).map_err(io_err(&path))?;
            for frame in &data.frames {
                let img = out_dir.join(&frame.image_path);
                if let Some(parent) = img.parent() {
                    fs::create_dir_all(parent).map_err(io_err(parent))?;
                }
                let bytes = placeholder_png(&case.case_id, name, frame.t_index as usize)?;
                fs::write(&img, bytes).map_err(io_err(&img))?;
            }
            channels.insert(
                name.clone(),
                ManifestChannel {
                    embedding_file: rel,
                    frames: data.frames.clone(),
                },
            );
        }
        cases.push(ManifestCase {
            case_id: case.case_id.clone(),
            params: case.params,
            channels,
        });
    }
    let manifest = ManifestDoc {
        dataset_name: ds.name().to_string(),
        channels: ds.channels().to_vec(),
        embedding_provenance: Some(format!(
            "synthetic seed={} signal_dim={} noise_dim={}",
            spec.seed, spec.signal_dim, spec.noise_dim
        )),
        cases,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(io_err(&path))?;
    let path = out_dir.join("ground_truth.json");
    fs::write(&path, serde_json::to_vec_pretty(&synth.truth)?).map_err(io_err(&path))?;

    let dataset = synth.dataset.clone().with_root(out_dir);
    Ok(SyntheticDataset {
        dataset,
        truth: synth.truth,
    })
}
