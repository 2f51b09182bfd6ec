//! Video-text scoring from key-event embeddings.
//!
//! All three aggregators L2-normalize every key event and the text before
//! taking cosines. `MeanPool` averages the unit key events, renormalizes
//! the pooled vector, and takes a single cosine.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{load_embeddings, Corpus, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};

/// Bound on |score| - 1 accepted as rounding error.
pub const SCORE_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimilarityMode {
    #[serde(rename = "avg")]
    KeyEventAvg,
    #[serde(rename = "max")]
    KeyEventMax,
    #[serde(rename = "mean")]
    MeanPool,
}

impl SimilarityMode {
    pub const ALL: [SimilarityMode; 3] = [Self::KeyEventAvg, Self::KeyEventMax, Self::MeanPool];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::KeyEventAvg => "avg",
            Self::KeyEventMax => "max",
            Self::MeanPool => "mean",
        }
    }
}

impl fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "avg" => Ok(Self::KeyEventAvg),
            "max" => Ok(Self::KeyEventMax),
            "mean" => Ok(Self::MeanPool),
            other => Err(Error::invalid(format!(
                "unknown similarity mode {other:?} (expected avg, max, or mean)"
            ))),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `v / |v|`, refusing zero vectors.
pub(crate) fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("zero-norm vector has no direction"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Unit key events of one video, plus the pooled direction when needed.
pub(crate) struct VideoRepr {
    pub(crate) keys: Vec<Vec<f64>>,
    pub(crate) pooled: Option<Vec<f64>>,
}

impl VideoRepr {
    pub(crate) fn new(rows: &[Vec<f64>], mode: SimilarityMode) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("video has no key events"));
        }
        let keys = rows.iter().map(|r| unit(r)).collect::<Result<Vec<_>>>()?;
        let pooled = if mode == SimilarityMode::MeanPool && keys.len() == 1 {
            // already unit; skipping the renormalization keeps K = 1 exact
            Some(keys[0].clone())
        } else if mode == SimilarityMode::MeanPool {
            let dim = keys[0].len();
            let mut mean = vec![0.0; dim];
            for k in &keys {
                for (m, x) in mean.iter_mut().zip(k) {
                    *m += x;
                }
            }
            for m in &mut mean {
                *m /= keys.len() as f64;
            }
            Some(unit(&mean).map_err(|_| Error::invalid("mean-pooled key events cancel to zero"))?)
        } else {
            None
        };
        Ok(Self { keys, pooled })
    }

    /// Score against a unit text vector. For `KeyEventMax` also returns the
    /// winning key index (lowest on ties).
    pub(crate) fn score(&self, text: &[f64], mode: SimilarityMode) -> (f64, usize) {
        match mode {
            SimilarityMode::KeyEventAvg => {
                let sum: f64 = self.keys.iter().map(|k| dot(k, text)).sum();
                (sum / self.keys.len() as f64, 0)
            }
            SimilarityMode::KeyEventMax => {
                let mut best = (f64::NEG_INFINITY, 0);
                for (e, k) in self.keys.iter().enumerate() {
                    let c = dot(k, text);
                    if c > best.0 {
                        best = (c, e);
                    }
                }
                best
            }
            SimilarityMode::MeanPool => (dot(self.pooled.as_ref().expect("pooled built"), text), 0),
        }
    }
}

/// Scores one video (given by its key-event rows) against one text.
pub fn score_pair(
    key_events: &EmbeddingMatrix,
    text: &EmbeddingMatrix,
    mode: SimilarityMode,
) -> Result<f64> {
    if text.rows() != 1 {
        return Err(Error::invalid("text must be a single-row matrix"));
    }
    if key_events.dim() != text.dim() {
        return Err(Error::invalid(format!(
            "dim mismatch: key events {} vs text {}",
            key_events.dim(),
            text.dim()
        )));
    }
    let repr = VideoRepr::new(&key_events.to_f64_rows(), mode)?;
    let t = unit(&text.to_f64_rows()[0])?;
    Ok(repr.score(&t, mode).0)
}

/// Dense videos x texts score grid with the ids of both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub video_ids: Vec<String>,
    pub text_ids: Vec<String>,
    scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreIds {
    pub videos: Vec<String>,
    pub texts: Vec<String>,
}

impl SimilarityMatrix {
    pub fn new(video_ids: Vec<String>, text_ids: Vec<String>, scores: Vec<f64>) -> Result<Self> {
        if scores.len() != video_ids.len() * text_ids.len() {
            return Err(Error::invalid(format!(
                "{} scores for {} videos x {} texts",
                scores.len(),
                video_ids.len(),
                text_ids.len()
            )));
        }
        if let Some(bad) = scores
            .iter()
            .find(|s| !(s.is_finite() && s.abs() <= 1.0 + SCORE_SLACK))
        {
            return Err(Error::invalid(format!("score {bad} outside [-1, 1]")));
        }
        Ok(Self {
            video_ids,
            text_ids,
            scores,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.video_ids.len()
    }

    pub fn n_texts(&self) -> usize {
        self.text_ids.len()
    }

    pub fn get(&self, video: usize, text: usize) -> f64 {
        self.scores[video * self.text_ids.len() + text]
    }

    pub fn row(&self, video: usize) -> &[f64] {
        let n = self.text_ids.len();
        &self.scores[video * n..(video + 1) * n]
    }

    /// Scores of every video for one text.
    pub fn column(&self, text: usize) -> Vec<f64> {
        (0..self.n_videos()).map(|i| self.get(i, text)).collect()
    }

    /// Sub-grid for the given row and column indices.
    pub fn select(&self, videos: &[usize], texts: &[usize]) -> Self {
        let mut scores = Vec::with_capacity(videos.len() * texts.len());
        for &i in videos {
            for &j in texts {
                scores.push(self.get(i, j));
            }
        }
        Self {
            video_ids: videos.iter().map(|&i| self.video_ids[i].clone()).collect(),
            text_ids: texts.iter().map(|&j| self.text_ids[j].clone()).collect(),
            scores,
        }
    }

    /// Checks that the axes follow the corpus order.
    pub fn check_matches(&self, corpus: &Corpus) -> Result<()> {
        if self.video_ids != corpus.video_ids() || self.text_ids != corpus.text_ids() {
            return Err(Error::invalid(
                "score matrix axes do not match the corpus videos/texts",
            ));
        }
        Ok(())
    }

    pub fn to_embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(
            self.n_videos(),
            self.n_texts(),
            self.scores.iter().map(|&s| s as f32).collect(),
        )
    }

    /// Copy of the grid as a videos x texts array.
    pub fn to_array(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_vec((self.n_videos(), self.n_texts()), self.scores.clone())
            .expect("length checked at construction")
    }

    pub fn ids(&self) -> ScoreIds {
        ScoreIds {
            videos: self.video_ids.clone(),
            texts: self.text_ids.clone(),
        }
    }

    pub fn from_parts(matrix: &EmbeddingMatrix, ids: ScoreIds) -> Result<Self> {
        if matrix.rows() != ids.videos.len() || matrix.dim() != ids.texts.len() {
            return Err(Error::invalid(format!(
                "score file is {} x {} but ids list {} videos and {} texts",
                matrix.rows(),
                matrix.dim(),
                ids.videos.len(),
                ids.texts.len()
            )));
        }
        Self::new(
            ids.videos,
            ids.texts,
            matrix.data().iter().map(|&v| f64::from(v)).collect(),
        )
    }
}

/// Path of the `.ids.json` sidecar belonging to a score file.
pub fn ids_sidecar_path(scores_path: &Path) -> PathBuf {
    scores_path.with_extension("ids.json")
}

/// Writes the score grid as an `.emb` file (rows = videos, dim = texts) and
/// its id sidecar.
pub fn save_scores(scores: &SimilarityMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    crate::corpus::save_embeddings(&scores.to_embedding_matrix()?, path)?;
    let ids = serde_json::to_string(&scores.ids()).map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(&ids_sidecar_path(path), format!("{ids}\n").as_bytes())
}

pub fn parse_score_ids(text: &str) -> Result<ScoreIds> {
    serde_json::from_str(text).map_err(|e| Error::invalid(format!("ids sidecar: {e}")))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<SimilarityMatrix> {
    let path = path.as_ref();
    let matrix = load_embeddings(path)?;
    let ids = parse_score_ids(&read_to_string(&ids_sidecar_path(path))?)?;
    SimilarityMatrix::from_parts(&matrix, ids)
}

/// Scores every corpus video against every corpus text.
pub fn score_matrix(
    corpus: &Corpus,
    key_events: &HashMap<String, EmbeddingMatrix>,
    mode: SimilarityMode,
) -> Result<SimilarityMatrix> {
    score_matrix_threaded(corpus, key_events, mode, 1)
}

/// As [`score_matrix`], splitting video rows across `threads` workers. The
/// output does not depend on the worker count.
pub fn score_matrix_threaded(
    corpus: &Corpus,
    key_events: &HashMap<String, EmbeddingMatrix>,
    mode: SimilarityMode,
    threads: usize,
) -> Result<SimilarityMatrix> {
    let reprs = corpus
        .videos()
        .iter()
        .map(|v| {
            let keys = key_events.get(&v.video_id).ok_or_else(|| {
                Error::invalid(format!("no key events for video {:?}", v.video_id))
            })?;
            if keys.dim() != corpus.dim() {
                return Err(Error::invalid(format!(
                    "key events of {:?} have dim {}, corpus dim {}",
                    v.video_id,
                    keys.dim(),
                    corpus.dim()
                )));
            }
            VideoRepr::new(&keys.to_f64_rows(), mode)
        })
        .collect::<Result<Vec<_>>>()?;
    let texts = corpus
        .texts()
        .iter()
        .map(|t| unit(&t.embedding.to_f64_rows()[0]))
        .collect::<Result<Vec<_>>>()?;

    let n_texts = texts.len();
    let mut scores = vec![0.0; reprs.len() * n_texts];
    let fill = |rows: &mut [f64], first_video: usize| {
        for (offset, out) in rows.chunks_exact_mut(n_texts.max(1)).enumerate() {
            let repr = &reprs[first_video + offset];
            for (cell, t) in out.iter_mut().zip(&texts) {
                *cell = repr.score(t, mode).0;
            }
        }
    };
    let threads = threads.max(1);
    if threads == 1 || reprs.len() < 2 || n_texts == 0 {
        fill(&mut scores, 0);
    } else {
        let per = reprs.len().div_ceil(threads);
        std::thread::scope(|s| {
            for (c, chunk) in scores.chunks_mut(per * n_texts).enumerate() {
                let fill = &fill;
                s.spawn(move || fill(chunk, c * per));
            }
        });
    }
    SimilarityMatrix::new(corpus.video_ids(), corpus.text_ids(), scores)
}
