//! Videos, captions, and the embeddings that stand in for encoder outputs.

mod embedding;
mod manifest;
mod synthetic;

use std::collections::{HashMap, HashSet};

pub use embedding::{load_embeddings, save_embeddings, EmbeddingMatrix, HEADER_LEN, MAGIC};
pub use manifest::{
    load_corpus, parse_manifest, save_corpus, Manifest, ManifestRecord, TextRecord, VideoRecord,
};
pub use synthetic::{
    generate_synthetic, parse_labels, save_labels, FrameLabels, SyntheticConfig, SyntheticCorpus,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VideoItem {
    pub video_id: String,
    /// One row per sampled frame.
    pub frames: EmbeddingMatrix,
    pub duration_seconds: f64,
    /// Caption ids in manifest order.
    pub text_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextItem {
    pub text_id: String,
    /// Single-row matrix.
    pub embedding: EmbeddingMatrix,
    pub video_id: String,
}

/// A validated collection of videos and their captions.
///
/// Every caption belongs to exactly one video, every id listed by a video
/// has a caption record, and all embeddings share one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    videos: Vec<VideoItem>,
    texts: Vec<TextItem>,
    dim: usize,
    text_owner: Vec<usize>,
    video_texts: Vec<Vec<usize>>,
}

impl Corpus {
    pub fn new(videos: Vec<VideoItem>, texts: Vec<TextItem>) -> Result<Self> {
        let dim = videos
            .first()
            .map(|v| v.frames.dim())
            .ok_or_else(|| Error::invalid("corpus has no videos"))?;
        if dim == 0 {
            return Err(Error::invalid("embeddings must have dim >= 1"));
        }

        let mut video_index = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            if video_index.insert(v.video_id.as_str(), i).is_some() {
                return Err(Error::invalid(format!("duplicate video id {:?}", v.video_id)));
            }
            if v.frames.rows() == 0 {
                return Err(Error::invalid(format!("video {:?} has no frames", v.video_id)));
            }
            if v.frames.dim() != dim {
                return Err(Error::invalid(format!(
                    "video {:?} has dim {}, corpus dim is {dim}",
                    v.video_id,
                    v.frames.dim()
                )));
            }
            if !(v.duration_seconds.is_finite() && v.duration_seconds >= 0.0) {
                return Err(Error::invalid(format!(
                    "video {:?} has invalid duration {}",
                    v.video_id, v.duration_seconds
                )));
            }
            if v.text_ids.is_empty() {
                return Err(Error::invalid(format!("video {:?} has no texts", v.video_id)));
            }
            let mut seen = HashSet::new();
            for t in &v.text_ids {
                if !seen.insert(t.as_str()) {
                    return Err(Error::invalid(format!(
                        "video {:?} lists text {t:?} twice",
                        v.video_id
                    )));
                }
            }
        }

        let mut text_index = HashMap::with_capacity(texts.len());
        let mut text_owner = Vec::with_capacity(texts.len());
        for (j, t) in texts.iter().enumerate() {
            if text_index.insert(t.text_id.as_str(), j).is_some() {
                return Err(Error::invalid(format!("duplicate text id {:?}", t.text_id)));
            }
            if t.embedding.rows() != 1 {
                return Err(Error::invalid(format!(
                    "text {:?} embedding has {} rows, expected 1",
                    t.text_id,
                    t.embedding.rows()
                )));
            }
            if t.embedding.dim() != dim {
                return Err(Error::invalid(format!(
                    "text {:?} has dim {}, corpus dim is {dim}",
                    t.text_id,
                    t.embedding.dim()
                )));
            }
            let owner = *video_index.get(t.video_id.as_str()).ok_or_else(|| {
                Error::invalid(format!(
                    "text {:?} references unknown video {:?}",
                    t.text_id, t.video_id
                ))
            })?;
            text_owner.push(owner);
        }

        let mut video_texts = Vec::with_capacity(videos.len());
        let mut listed = 0usize;
        for (i, v) in videos.iter().enumerate() {
            let mut idx = Vec::with_capacity(v.text_ids.len());
            for t in &v.text_ids {
                let j = *text_index.get(t.as_str()).ok_or_else(|| {
                    Error::invalid(format!("video {:?} lists unknown text {t:?}", v.video_id))
                })?;
                if text_owner[j] != i {
                    return Err(Error::invalid(format!(
                        "text {t:?} is listed by video {:?} but references {:?}",
                        v.video_id, texts[j].video_id
                    )));
                }
                idx.push(j);
            }
            listed += idx.len();
            video_texts.push(idx);
        }
        if listed != texts.len() {
            // some text names an owner that does not list it
            let orphan = texts
                .iter()
                .enumerate()
                .find(|(j, t)| {
                    !videos[text_owner[*j]].text_ids.iter().any(|id| id == &t.text_id)
                })
                .map(|(_, t)| t.text_id.clone())
                .unwrap_or_default();
            return Err(Error::invalid(format!(
                "text {orphan:?} is not listed by its video"
            )));
        }

        Ok(Self {
            videos,
            texts,
            dim,
            text_owner,
            video_texts,
        })
    }

    pub fn videos(&self) -> &[VideoItem] {
        &self.videos
    }

    pub fn texts(&self) -> &[TextItem] {
        &self.texts
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the video owning text `j`.
    pub fn text_owner(&self, j: usize) -> usize {
        self.text_owner[j]
    }

    pub fn text_owners(&self) -> &[usize] {
        &self.text_owner
    }

    /// Text indices of video `i`, in the video's `text_ids` order.
    pub fn texts_of(&self, i: usize) -> &[usize] {
        &self.video_texts[i]
    }

    /// Number of events (captions) of video `i`.
    pub fn event_count(&self, i: usize) -> usize {
        self.video_texts[i].len()
    }

    pub fn video_ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.video_id.clone()).collect()
    }

    pub fn text_ids(&self) -> Vec<String> {
        self.texts.iter().map(|t| t.text_id.clone()).collect()
    }

    /// All text embeddings stacked in corpus order.
    pub fn text_matrix(&self) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(self.texts.len() * self.dim);
        for t in &self.texts {
            data.extend_from_slice(t.embedding.data());
        }
        EmbeddingMatrix::new(self.texts.len(), self.dim, data).expect("validated texts")
    }

    /// Restricts the corpus to the given videos (kept in corpus order)
    /// together with their captions.
    pub fn subset<'a>(&self, video_ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let keep: HashSet<&str> = video_ids.into_iter().collect();
        let videos: Vec<VideoItem> = self
            .videos
            .iter()
            .filter(|v| keep.contains(v.video_id.as_str()))
            .cloned()
            .collect();
        let texts = self
            .texts
            .iter()
            .filter(|t| keep.contains(t.video_id.as_str()))
            .cloned()
            .collect();
        Corpus::new(videos, texts)
    }
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;

    #[test]
    fn indexes_owners_and_events() {
        let c = corpus(&[
            (vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]),
            (vec![vec![0.0, 1.0]], vec![vec![0.0, 1.0]]),
        ]);
        assert_eq!(c.videos().len(), 2);
        assert_eq!(c.texts().len(), 4);
        assert_eq!((c.event_count(0), c.event_count(1)), (3, 1));
        assert_eq!(c.text_owners(), &[0, 0, 0, 1]);
        assert_eq!(c.texts_of(1), &[3]);
        let sub = c.subset(["v1"]).unwrap();
        assert_eq!(sub.texts().len(), 1);
    }

    #[test]
    fn rejects_inconsistent_references() {
        let base = corpus(&[(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]])]);
        let mut texts = base.texts().to_vec();
        texts[0].video_id = "nope".into();
        assert!(Corpus::new(base.videos().to_vec(), texts).is_err());

        let mut videos = base.videos().to_vec();
        videos[0].text_ids.push("ghost".into());
        assert!(Corpus::new(videos, base.texts().to_vec()).is_err());

        let mut videos = base.videos().to_vec();
        let first = videos[0].text_ids[0].clone();
        videos[0].text_ids.push(first);
        assert!(Corpus::new(videos, base.texts().to_vec()).is_err());

        let mut texts = base.texts().to_vec();
        texts[0].embedding = row(&[1.0, 0.0, 0.0]);
        assert!(Corpus::new(base.videos().to_vec(), texts).is_err());
    }

    #[test]
    fn rejects_orphan_text() {
        let base = corpus(&[(vec![vec![1.0, 0.0]], vec![vec![1.0, 0.0]])]);
        let mut texts = base.texts().to_vec();
        texts.push(TextItem {
            text_id: "extra".into(),
            embedding: row(&[0.0, 1.0]),
            video_id: "v0".into(),
        });
        let err = Corpus::new(base.videos().to_vec(), texts).unwrap_err();
        assert!(err.to_string().contains("extra"));
    }
}
