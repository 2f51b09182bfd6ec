//! Seeded multi-event corpora built from latent event anchors.
//!
//! Each video draws `E` unit anchors with pairwise cosine at most
//! `1 - event_separation`. Every event emits a run of noisy frames around
//! its anchor and exactly one noisy caption, so ground-truth frame labels
//! are known.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Corpus, EmbeddingMatrix, TextItem, VideoItem};
use crate::error::{Error, Result};
use crate::io::{parse_jsonl, to_jsonl, write_atomic};

const MAX_ANCHOR_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_videos: usize,
    /// Inclusive range of events (captions) per video.
    pub events_per_video: (usize, usize),
    /// Inclusive range of frames emitted per event.
    pub frames_per_event: (usize, usize),
    pub dim: usize,
    pub event_separation: f64,
    pub noise_scale: f64,
    /// Seconds of video per frame; durations are `frames * frame_interval_s`.
    pub frame_interval_s: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_videos: 40,
            events_per_video: (3, 6),
            frames_per_event: (4, 8),
            dim: 16,
            event_separation: 0.5,
            noise_scale: 0.05,
            frame_interval_s: 5.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::invalid("synthetic dim must be >= 2"));
        }
        if self.n_videos == 0 {
            return Err(Error::invalid("n_videos must be >= 1"));
        }
        for (name, (lo, hi)) in [
            ("events_per_video", self.events_per_video),
            ("frames_per_event", self.frames_per_event),
        ] {
            if lo == 0 || lo > hi {
                return Err(Error::invalid(format!("{name} range {lo}..={hi} is empty or zero")));
            }
        }
        if !(0.0..=1.0).contains(&self.event_separation) {
            return Err(Error::invalid("event_separation must lie in [0, 1]"));
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("noise_scale must be finite and >= 0"));
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s >= 0.0) {
            return Err(Error::invalid("frame_interval_s must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Ground-truth event index of every frame of one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameLabels {
    pub video: String,
    pub frame_labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Per video, in corpus order.
    pub labels: Vec<FrameLabels>,
    /// Per video, one row per event.
    pub anchors: Vec<EmbeddingMatrix>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn perturb(rng: &mut ChaCha8Rng, anchor: &[f64], scale: f64) -> Vec<f32> {
    if scale == 0.0 {
        return anchor.iter().map(|&x| x as f32).collect();
    }
    loop {
        let v: Vec<f64> = anchor
            .iter()
            .map(|&a| a + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| (x / n) as f32).collect();
        }
    }
}

fn draw_anchors(rng: &mut ChaCha8Rng, count: usize, cfg: &SyntheticConfig) -> Result<Vec<Vec<f64>>> {
    let max_cos = 1.0 - cfg.event_separation;
    let mut anchors: Vec<Vec<f64>> = Vec::with_capacity(count);
    while anchors.len() < count {
        let mut placed = false;
        for _ in 0..MAX_ANCHOR_ATTEMPTS {
            let cand = unit_gaussian(rng, cfg.dim);
            if anchors.iter().all(|a| dot(a, &cand) <= max_cos) {
                anchors.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Infeasible(format!(
                "could not place {count} anchors in dim {} with pairwise cosine <= {max_cos} \
                 ({MAX_ANCHOR_ATTEMPTS} attempts for anchor {})",
                cfg.dim,
                anchors.len()
            )));
        }
    }
    Ok(anchors)
}

/// Generates a corpus as a pure function of `config` (seed included).
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut videos = Vec::with_capacity(config.n_videos);
    let mut texts = Vec::new();
    let mut labels = Vec::with_capacity(config.n_videos);
    let mut anchor_sets = Vec::with_capacity(config.n_videos);

    for i in 0..config.n_videos {
        let video_id = format!("v{i:04}");
        let n_events = rng.random_range(config.events_per_video.0..=config.events_per_video.1);
        let anchors = draw_anchors(&mut rng, n_events, config)?;

        let mut frames = Vec::new();
        let mut frame_labels = Vec::new();
        let mut text_ids = Vec::with_capacity(n_events);
        for (e, anchor) in anchors.iter().enumerate() {
            let n_frames = rng.random_range(config.frames_per_event.0..=config.frames_per_event.1);
            for _ in 0..n_frames {
                frames.push(perturb(&mut rng, anchor, config.noise_scale));
                frame_labels.push(e);
            }
            let text_id = format!("{video_id}_e{e:02}");
            let emb = perturb(&mut rng, anchor, config.noise_scale);
            texts.push(TextItem {
                text_id: text_id.clone(),
                embedding: EmbeddingMatrix::new(1, config.dim, emb)?,
                video_id: video_id.clone(),
            });
            text_ids.push(text_id);
        }
        let anchor_rows: Vec<Vec<f32>> = anchors
            .iter()
            .map(|a| a.iter().map(|&x| x as f32).collect())
            .collect();
        anchor_sets.push(EmbeddingMatrix::from_rows(&anchor_rows)?);
        videos.push(VideoItem {
            video_id: video_id.clone(),
            duration_seconds: frames.len() as f64 * config.frame_interval_s,
            frames: EmbeddingMatrix::from_rows(&frames)?,
            text_ids,
        });
        labels.push(FrameLabels {
            video: video_id,
            frame_labels,
        });
    }

    Ok(SyntheticCorpus {
        corpus: Corpus::new(videos, texts)?,
        labels,
        anchors: anchor_sets,
    })
}

/// Writes the `.labels.jsonl` sidecar.
pub fn save_labels(labels: &[FrameLabels], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), to_jsonl(labels)?.as_bytes())
}

pub fn parse_labels(text: &str) -> Result<Vec<FrameLabels>> {
    Ok(parse_jsonl(text)?.into_iter().map(|(_, l)| l).collect())
}
