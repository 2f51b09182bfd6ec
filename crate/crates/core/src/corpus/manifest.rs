//! Line-delimited JSON manifests tying ids to `.emb` files.
//!
//! ```text
//! {"kind":"video","id":"v0","emb":"frames/v0.emb","duration_s":42.0,"texts":["t0","t1"]}
//! {"kind":"text","id":"t0","emb":"texts.emb","row":0,"video":"v0"}
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_embeddings, Corpus, EmbeddingMatrix, TextItem, VideoItem};
use crate::error::{Error, Result};
use crate::io::{parse_jsonl, read_to_string, to_jsonl, write_atomic};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    pub emb: String,
    pub duration_s: f64,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRecord {
    pub id: String,
    pub emb: String,
    #[serde(default)]
    pub row: u64,
    pub video: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ManifestRecord {
    Video(VideoRecord),
    Text(TextRecord),
}

/// A structurally validated manifest: ids are unique and every reference
/// between videos and texts resolves. Embedding files are not touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub videos: Vec<(usize, VideoRecord)>,
    pub texts: Vec<(usize, TextRecord)>,
}

fn at(line: usize, message: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        message: message.into(),
    }
}

/// Parses and cross-checks manifest text.
pub fn parse_manifest(text: &str) -> Result<Manifest> {
    let mut videos = Vec::new();
    let mut texts = Vec::new();
    for (line, rec) in parse_jsonl::<ManifestRecord>(text)? {
        match rec {
            ManifestRecord::Video(v) => videos.push((line, v)),
            ManifestRecord::Text(t) => texts.push((line, t)),
        }
    }
    if videos.is_empty() {
        return Err(at(1, "manifest has no video records"));
    }

    let mut video_lines: HashMap<&str, (usize, &VideoRecord)> = HashMap::new();
    for (line, v) in &videos {
        if v.id.is_empty() {
            return Err(at(*line, "video id is empty"));
        }
        if !(v.duration_s.is_finite() && v.duration_s >= 0.0) {
            return Err(at(*line, format!("invalid duration_s {}", v.duration_s)));
        }
        if v.texts.is_empty() {
            return Err(at(*line, format!("video {:?} lists no texts", v.id)));
        }
        let mut seen = HashSet::new();
        for t in &v.texts {
            if !seen.insert(t.as_str()) {
                return Err(at(*line, format!("video {:?} lists text {t:?} twice", v.id)));
            }
        }
        if let Some((first, _)) = video_lines.insert(v.id.as_str(), (*line, v)) {
            return Err(at(
                *line,
                format!("duplicate video id {:?} (first on line {first})", v.id),
            ));
        }
    }

    let mut text_lines: HashMap<&str, usize> = HashMap::new();
    for (line, t) in &texts {
        if let Some(first) = text_lines.insert(t.id.as_str(), *line) {
            return Err(at(
                *line,
                format!("duplicate text id {:?} (first on line {first})", t.id),
            ));
        }
        let (_, owner) = video_lines.get(t.video.as_str()).ok_or_else(|| {
            at(*line, format!("text {:?} references unknown video {:?}", t.id, t.video))
        })?;
        if !owner.texts.iter().any(|id| id == &t.id) {
            return Err(at(
                *line,
                format!("text {:?} is not listed by video {:?}", t.id, t.video),
            ));
        }
    }
    for (line, v) in &videos {
        if let Some(missing) = v.texts.iter().find(|t| !text_lines.contains_key(t.as_str())) {
            return Err(at(
                *line,
                format!("video {:?} lists text {missing:?} with no text record", v.id),
            ));
        }
    }
    Ok(Manifest { videos, texts })
}

struct FileCache {
    base: PathBuf,
    files: BTreeMap<PathBuf, EmbeddingMatrix>,
}

impl FileCache {
    fn get(&mut self, rel: &str, line: usize) -> Result<&EmbeddingMatrix> {
        let path = self.base.join(rel);
        if !self.files.contains_key(&path) {
            let m = load_embeddings(&path).map_err(|e| match e {
                Error::Io { .. } => e,
                other => at(line, format!("{}: {other}", path.display())),
            })?;
            self.files.insert(path.clone(), m);
        }
        Ok(&self.files[&path])
    }
}

/// Loads a manifest and every embedding file it references. Relative
/// paths resolve against the manifest's directory.
pub fn load_corpus(manifest_path: impl AsRef<Path>) -> Result<Corpus> {
    let manifest_path = manifest_path.as_ref();
    let manifest = parse_manifest(&read_to_string(manifest_path)?)?;
    let base = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let mut cache = FileCache {
        base,
        files: BTreeMap::new(),
    };

    let mut dim: Option<(usize, usize)> = None;
    let mut check_dim = |d: usize, line: usize| -> Result<()> {
        match dim {
            None => {
                dim = Some((d, line));
                Ok(())
            }
            Some((expected, first)) if expected != d => Err(at(
                line,
                format!("dim mismatch: {d} here, {expected} on line {first}"),
            )),
            Some(_) => Ok(()),
        }
    };

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for (line, v) in &manifest.videos {
        let frames = cache.get(&v.emb, *line)?.clone();
        check_dim(frames.dim(), *line)?;
        videos.push(VideoItem {
            video_id: v.id.clone(),
            frames,
            duration_seconds: v.duration_s,
            text_ids: v.texts.clone(),
        });
    }
    let mut texts = Vec::with_capacity(manifest.texts.len());
    for (line, t) in &manifest.texts {
        let file = cache.get(&t.emb, *line)?;
        let row = usize::try_from(t.row)
            .ok()
            .filter(|&r| r < file.rows())
            .ok_or_else(|| {
                at(*line, format!("row {} out of range for {} ({} rows)", t.row, t.emb, file.rows()))
            })?;
        let embedding = file.select_rows(&[row])?;
        check_dim(embedding.dim(), *line)?;
        texts.push(TextItem {
            text_id: t.id.clone(),
            embedding,
            video_id: t.video.clone(),
        });
    }
    Corpus::new(videos, texts)
}

/// Writes `corpus` under `dir` as `manifest.jsonl`, one frame file per video
/// in `frames/`, and a shared `texts.emb`. Returns the manifest path.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;

    let mut records = Vec::with_capacity(corpus.videos().len() + corpus.texts().len());
    for (i, v) in corpus.videos().iter().enumerate() {
        let rel = format!("frames/{i:05}.emb");
        super::save_embeddings(&v.frames, dir.join(&rel))?;
        records.push(ManifestRecord::Video(VideoRecord {
            id: v.video_id.clone(),
            emb: rel,
            duration_s: v.duration_seconds,
            texts: v.text_ids.clone(),
        }));
    }
    super::save_embeddings(&corpus.text_matrix(), dir.join("texts.emb"))?;
    for (j, t) in corpus.texts().iter().enumerate() {
        records.push(ManifestRecord::Text(TextRecord {
            id: t.text_id.clone(),
            emb: "texts.emb".into(),
            row: j as u64,
            video: t.video_id.clone(),
        }));
    }
    let path = dir.join("manifest.jsonl");
    write_atomic(&path, to_jsonl(&records)?.as_bytes())?;
    Ok(path)
}
