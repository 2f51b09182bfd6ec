//! Gradient-descent training of a shared linear projection over frozen
//! frame and caption embeddings.
//!
//! Forward pass per batch: project key-event frames and captions through the
//! head, normalize, aggregate into a score grid, and evaluate the loss.
//! The backward pass chains the loss gradient through the aggregator, the
//! normalizations, and the projection.

use std::collections::HashMap;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize, Serializer};

use crate::corpus::{Corpus, EmbeddingMatrix, TextItem, VideoItem};
use crate::error::{Error, Result};
use crate::eval::collapse_diagnostic;
use crate::keyevents::{select_key_events, ClusterConfig};
use crate::loss::{mevtr_loss, plain_softmax_loss, BatchLayout, LossConfig, LossOutput};
use crate::similarity::SimilarityMode;

fn serialize_rows<S: Serializer>(m: &Array2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = m.outer_iter().map(|r| r.to_vec()).collect();
    rows.serialize(s)
}

/// `y = x W` with `W` of shape `dim_in x dim_out`, shared by frames and
/// captions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionHead {
    #[serde(serialize_with = "serialize_rows")]
    pub weights: Array2<f64>,
}

impl ProjectionHead {
    pub fn identity(dim: usize) -> Self {
        Self {
            weights: Array2::eye(dim),
        }
    }

    pub fn new(weights: Array2<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("head weights must be finite"));
        }
        if weights.is_empty() {
            return Err(Error::invalid("head has no weights"));
        }
        Ok(Self { weights })
    }

    pub fn dim_in(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dim_out(&self) -> usize {
        self.weights.ncols()
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim_in() {
            return Err(Error::invalid(format!(
                "vector has dim {}, head expects {}",
                x.len(),
                self.dim_in()
            )));
        }
        Ok(Array1::from(x.to_vec()).dot(&self.weights).to_vec())
    }

    pub fn project_matrix(&self, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if m.dim() != self.dim_in() {
            return Err(Error::invalid("matrix dim does not match head"));
        }
        let x = rows_to_array(&m.to_f64_rows(), m.dim());
        let y = x.dot(&self.weights);
        EmbeddingMatrix::new(m.rows(), self.dim_out(), y.iter().map(|&v| v as f32).collect())
    }

    pub fn to_embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(
            self.dim_in(),
            self.dim_out(),
            self.weights.iter().map(|&v| v as f32).collect(),
        )
    }

    pub fn from_embedding_matrix(m: &EmbeddingMatrix) -> Result<Self> {
        let w = rows_to_array(&m.to_f64_rows(), m.dim());
        Self::new(w)
    }
}

fn rows_to_array(rows: &[Vec<f64>], dim: usize) -> Array2<f64> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat).expect("rectangular rows")
}

/// Re-expresses every frame and caption through `head`.
pub fn project_corpus(corpus: &Corpus, head: &ProjectionHead) -> Result<Corpus> {
    let videos = corpus
        .videos()
        .iter()
        .map(|v| {
            Ok(VideoItem {
                frames: head.project_matrix(&v.frames)?,
                ..v.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let texts = corpus
        .texts()
        .iter()
        .map(|t| {
            Ok(TextItem {
                embedding: head.project_matrix(&t.embedding)?,
                ..t.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new(videos, texts)
}

/// One training batch in input (unprojected) coordinates.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Per video, its key-event rows.
    pub video_keys: Vec<Array2<f64>>,
    /// One row per caption.
    pub text_embs: Array2<f64>,
    pub layout: BatchLayout,
}

impl Batch {
    /// Gathers `videos` (corpus indices) with the given key-event frame
    /// indices and all of their captions.
    pub fn from_corpus(corpus: &Corpus, videos: &[usize], keys: &[Vec<usize>]) -> Result<Self> {
        let dim = corpus.dim();
        let mut video_keys = Vec::with_capacity(videos.len());
        let mut text_rows = Vec::new();
        let mut positives = Vec::with_capacity(videos.len());
        for &i in videos {
            let frames = &corpus.videos()[i].frames;
            let gathered = frames.select_rows(&keys[i])?;
            video_keys.push(rows_to_array(&gathered.to_f64_rows(), dim));
            let mut ps = Vec::new();
            for &j in corpus.texts_of(i) {
                ps.push(text_rows.len());
                text_rows.push(corpus.texts()[j].embedding.to_f64_rows().remove(0));
            }
            positives.push(ps);
        }
        Ok(Self {
            video_keys,
            text_embs: rows_to_array(&text_rows, dim),
            layout: BatchLayout::new(positives)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub use_key_events: bool,
    pub use_mevtr_loss: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_key_events: true,
            use_mevtr_loss: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Recluster {
    Once,
    #[serde(rename = "epoch")]
    EveryEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_videos: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub loss: LossConfig,
    pub mode: SimilarityMode,
    pub ablation: Ablation,
    pub recluster: Recluster,
    pub cluster: ClusterConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_videos: 8,
            learning_rate: 0.05,
            seed: 0,
            loss: LossConfig::default(),
            mode: SimilarityMode::KeyEventAvg,
            ablation: Ablation::default(),
            recluster: Recluster::Once,
            cluster: ClusterConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_videos < 2 {
            return Err(Error::invalid("batch_videos must be >= 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be finite and >= 0"));
        }
        self.loss.validate()?;
        self.cluster.validate()
    }

    /// Without key events the video is every frame, mean-pooled.
    pub fn effective_mode(&self) -> SimilarityMode {
        if self.ablation.use_key_events {
            self.mode
        } else {
            SimilarityMode::MeanPool
        }
    }
}

/// Unit-normalizes a row, returning the unit vector and the original norm.
fn normalize_row(v: &Array1<f64>) -> Result<(Array1<f64>, f64)> {
    let n = v.dot(v).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::invalid("zero-norm embedding after projection"));
    }
    Ok((v / n, n))
}

/// Backprop through `u = v / |v|`.
fn normalize_backward(g: &Array1<f64>, u: &Array1<f64>, n: f64) -> Array1<f64> {
    (g - &(u * g.dot(u))) / n
}

struct Forward {
    key_unit: Vec<Vec<(Array1<f64>, f64)>>,
    text_unit: Vec<(Array1<f64>, f64)>,
    /// pooled unit vector and pre-normalization norm, MeanPool only
    pooled: Vec<Option<(Array1<f64>, f64)>>,
    argmax: Array2<usize>,
    scores: Array2<f64>,
}

fn forward(batch: &Batch, head: &ProjectionHead, mode: SimilarityMode) -> Result<Forward> {
    if batch.text_embs.ncols() != head.dim_in()
        || batch.video_keys.iter().any(|k| k.ncols() != head.dim_in())
    {
        return Err(Error::invalid("batch dim does not match head"));
    }
    if batch.video_keys.iter().any(|k| k.nrows() == 0) {
        return Err(Error::invalid("video with no key events"));
    }
    let text_proj = batch.text_embs.dot(&head.weights);
    let text_unit = text_proj
        .outer_iter()
        .map(|r| normalize_row(&r.to_owned()))
        .collect::<Result<Vec<_>>>()?;
    let key_unit = batch
        .video_keys
        .iter()
        .map(|k| {
            k.dot(&head.weights)
                .outer_iter()
                .map(|r| normalize_row(&r.to_owned()))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled = key_unit
        .iter()
        .map(|keys| {
            if mode != SimilarityMode::MeanPool {
                return Ok(None);
            }
            let mut mean = Array1::zeros(head.dim_out());
            for (u, _) in keys {
                mean += u;
            }
            mean /= keys.len() as f64;
            normalize_row(&mean).map(Some)
        })
        .collect::<Result<Vec<_>>>()?;

    let (nv, nt) = (key_unit.len(), text_unit.len());
    let mut scores = Array2::zeros((nv, nt));
    let mut argmax = Array2::zeros((nv, nt));
    for i in 0..nv {
        for (j, (t, _)) in text_unit.iter().enumerate() {
            scores[(i, j)] = match mode {
                SimilarityMode::KeyEventAvg => {
                    key_unit[i].iter().map(|(u, _)| u.dot(t)).sum::<f64>() / key_unit[i].len() as f64
                }
                SimilarityMode::KeyEventMax => {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for (e, (u, _)) in key_unit[i].iter().enumerate() {
                        let c = u.dot(t);
                        if c > best.0 {
                            best = (c, e);
                        }
                    }
                    argmax[(i, j)] = best.1;
                    best.0
                }
                SimilarityMode::MeanPool => pooled[i].as_ref().expect("pooled").0.dot(t),
            };
        }
    }
    Ok(Forward {
        key_unit,
        text_unit,
        pooled,
        argmax,
        scores,
    })
}

fn batch_loss_from_scores(scores: &Array2<f64>, batch: &Batch, config: &TrainConfig) -> Result<LossOutput> {
    if config.ablation.use_mevtr_loss {
        mevtr_loss(scores, &batch.layout, &config.loss)
    } else {
        plain_softmax_loss(scores, &batch.layout, config.loss.temperature)
    }
}

/// Batch score grid under the current head.
pub fn batch_scores(batch: &Batch, head: &ProjectionHead, config: &TrainConfig) -> Result<Array2<f64>> {
    Ok(forward(batch, head, config.effective_mode())?.scores)
}

/// Batch loss under the current head (forward pass only).
pub fn batch_loss(batch: &Batch, head: &ProjectionHead, config: &TrainConfig) -> Result<LossOutput> {
    let fwd = forward(batch, head, config.effective_mode())?;
    batch_loss_from_scores(&fwd.scores, batch, config)
}

#[derive(Debug, Clone)]
pub struct HeadGradient {
    pub loss: LossOutput,
    /// d total / d W, with dynamic alpha held constant.
    pub weights: Array2<f64>,
}

/// Exact gradient of the batch loss with respect to the head weights. For
/// `KeyEventMax` the gradient flows only through the winning key event.
pub fn head_gradient(batch: &Batch, head: &ProjectionHead, config: &TrainConfig) -> Result<HeadGradient> {
    let mode = config.effective_mode();
    let fwd = forward(batch, head, mode)?;
    let loss = batch_loss_from_scores(&fwd.scores, batch, config)?;
    let g = &loss.grad_scores;
    let dim_out = head.dim_out();
    let (nv, nt) = g.dim();

    let mut grad_text: Vec<Array1<f64>> = vec![Array1::zeros(dim_out); nt];
    let mut grad_keys: Vec<Vec<Array1<f64>>> = fwd
        .key_unit
        .iter()
        .map(|k| vec![Array1::zeros(dim_out); k.len()])
        .collect();

    for i in 0..nv {
        let keys = &fwd.key_unit[i];
        let kf = keys.len() as f64;
        match mode {
            SimilarityMode::KeyEventAvg => {
                let mut mean_key = Array1::zeros(dim_out);
                for (u, _) in keys {
                    mean_key += u;
                }
                mean_key /= kf;
                let mut to_keys = Array1::zeros(dim_out);
                for j in 0..nt {
                    grad_text[j].scaled_add(g[(i, j)], &mean_key);
                    to_keys.scaled_add(g[(i, j)] / kf, &fwd.text_unit[j].0);
                }
                for gk in &mut grad_keys[i] {
                    *gk += &to_keys;
                }
            }
            SimilarityMode::KeyEventMax => {
                for j in 0..nt {
                    let e = fwd.argmax[(i, j)];
                    grad_text[j].scaled_add(g[(i, j)], &keys[e].0);
                    grad_keys[i][e].scaled_add(g[(i, j)], &fwd.text_unit[j].0);
                }
            }
            SimilarityMode::MeanPool => {
                let (pooled, pooled_norm) = fwd.pooled[i].as_ref().expect("pooled");
                let mut to_pooled = Array1::zeros(dim_out);
                for j in 0..nt {
                    grad_text[j].scaled_add(g[(i, j)], pooled);
                    to_pooled.scaled_add(g[(i, j)], &fwd.text_unit[j].0);
                }
                let to_mean = normalize_backward(&to_pooled, pooled, *pooled_norm) / kf;
                for gk in &mut grad_keys[i] {
                    *gk += &to_mean;
                }
            }
        }
    }

    let mut grad_w = Array2::zeros((head.dim_in(), dim_out));
    let mut text_proj_grad = Array2::zeros((nt, dim_out));
    for (j, (u, n)) in fwd.text_unit.iter().enumerate() {
        text_proj_grad
            .row_mut(j)
            .assign(&normalize_backward(&grad_text[j], u, *n));
    }
    grad_w += &batch.text_embs.t().dot(&text_proj_grad);
    for (i, keys) in fwd.key_unit.iter().enumerate() {
        let mut rows = Array2::zeros((keys.len(), dim_out));
        for (e, (u, n)) in keys.iter().enumerate() {
            rows.row_mut(e)
                .assign(&normalize_backward(&grad_keys[i][e], u, *n));
        }
        grad_w += &batch.video_keys[i].t().dot(&rows);
    }
    if grad_w.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::invalid("non-finite head gradient"));
    }
    Ok(HeadGradient {
        loss,
        weights: grad_w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub batches: usize,
    pub l_v2t: f64,
    pub l_t2v: f64,
    pub alpha: f64,
    pub total: f64,
    /// Corpus mean / variance of caption self-similarity after the epoch.
    pub collapse_mean: f64,
    pub collapse_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Key-event frame indices per video used in the last epoch.
    pub key_events: Vec<Vec<usize>>,
    pub final_head: ProjectionHead,
}

fn select_keys(corpus: &Corpus, head: &ProjectionHead, config: &TrainConfig) -> Result<Vec<Vec<usize>>> {
    corpus
        .videos()
        .iter()
        .map(|v| {
            if !config.ablation.use_key_events {
                return Ok((0..v.frames.rows()).collect());
            }
            let projected = head.project_matrix(&v.frames)?;
            Ok(select_key_events(&projected, &config.cluster)?.medoid_indices)
        })
        .collect()
}

/// Splits a shuffled order into batches; a trailing single video joins the
/// previous batch.
fn make_batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("has previous").extend(tail);
    }
    batches
}

/// Trains an identity-initialized head with plain gradient descent.
pub fn train(corpus: &Corpus, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let n = corpus.videos().len();
    if config.batch_videos > n {
        return Err(Error::invalid(format!(
            "batch_videos {} exceeds corpus size {n}",
            config.batch_videos
        )));
    }
    let mut head = ProjectionHead::identity(corpus.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut keys = select_keys(corpus, &head, config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..config.epochs {
        if epoch > 0 && config.recluster == Recluster::EveryEpoch {
            keys = select_keys(corpus, &head, config)?;
        }
        order.shuffle(&mut rng);
        let batches = make_batches(&order, config.batch_videos);
        let (mut v2t, mut t2v, mut alpha, mut total) = (0.0, 0.0, 0.0, 0.0);
        for (b, videos) in batches.iter().enumerate() {
            let batch = Batch::from_corpus(corpus, videos, &keys)?;
            let grad = head_gradient(&batch, &head, config).map_err(|e| match e {
                Error::Invalid(msg) if msg.contains("non-finite") => Error::Divergence { epoch, batch: b },
                other => other,
            })?;
            let out = &grad.loss;
            if !(out.total.is_finite() && out.l_v2t.is_finite() && out.l_t2v.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
            v2t += out.l_v2t;
            t2v += out.l_t2v;
            alpha += out.alpha_used;
            total += out.total;
            head.weights.scaled_add(-config.learning_rate, &grad.weights);
            if head.weights.iter().any(|w| !w.is_finite()) {
                return Err(Error::Divergence { epoch, batch: b });
            }
        }
        let nb = batches.len() as f64;
        let collapse = collapse_diagnostic(corpus, Some(&head), true)?;
        epochs.push(EpochStats {
            epoch,
            batches: batches.len(),
            l_v2t: v2t / nb,
            l_t2v: t2v / nb,
            alpha: alpha / nb,
            total: total / nb,
            collapse_mean: collapse.mean.unwrap_or(f64::NAN),
            collapse_variance: collapse.variance.unwrap_or(f64::NAN),
        });
    }
    Ok(TrainReport {
        epochs,
        key_events: keys,
        final_head: head,
    })
}

/// Key-event rows per video id after projecting through `head`.
pub fn projected_key_events(
    corpus: &Corpus,
    head: &ProjectionHead,
    keys: &[Vec<usize>],
) -> Result<HashMap<String, EmbeddingMatrix>> {
    corpus
        .videos()
        .iter()
        .zip(keys)
        .map(|(v, k)| {
            let rows = v.frames.select_rows(k)?;
            Ok((v.video_id.clone(), head.project_matrix(&rows)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticConfig};

    fn small_corpus(noise: f64) -> Corpus {
        generate_synthetic(&SyntheticConfig {
            n_videos: 6,
            events_per_video: (2, 3),
            frames_per_event: (2, 3),
            dim: 6,
            event_separation: 0.5,
            noise_scale: noise,
            frame_interval_s: 5.0,
            seed: 4,
        })
        .unwrap()
        .corpus
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_videos: 3,
            learning_rate: 0.05,
            cluster: ClusterConfig { k: 3, ..ClusterConfig::default() },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let c = small_corpus(0.1);
        let r = train(&c, &TrainConfig { learning_rate: 0.0, ..cfg() }).unwrap();
        assert_eq!(r.final_head, ProjectionHead::identity(c.dim()));
        // batches differ between epochs, but the corpus-level collapse is fixed
        assert!(r.epochs.windows(2).all(|w| w[0].collapse_mean == w[1].collapse_mean));
        assert_eq!(r.epochs.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let c = small_corpus(0.1);
        let a = train(&c, &cfg()).unwrap();
        let b = train(&c, &cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        let c = small_corpus(0.1);
        assert!(train(&c, &TrainConfig { batch_videos: 1, ..cfg() }).is_err());
        assert!(train(&c, &TrainConfig { batch_videos: 7, ..cfg() }).is_err());
        assert!(train(&c, &TrainConfig { epochs: 0, ..cfg() }).is_err());
        assert!(train(&c, &TrainConfig { learning_rate: f64::NAN, ..cfg() }).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let c = small_corpus(0.1);
        let err = train(&c, &TrainConfig { learning_rate: 1e300, epochs: 5, ..cfg() }).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. } | Error::Invalid(_)), "{err:?}");
    }

    #[test]
    fn batching_merges_singletons() {
        assert_eq!(make_batches(&[0, 1, 2, 3, 4], 2), vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(make_batches(&[0, 1, 2, 3], 2), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn zero_embedding_rejected() {
        let batch = Batch {
            video_keys: vec![Array2::zeros((1, 2)), Array2::eye(2)],
            text_embs: Array2::eye(2),
            layout: BatchLayout::new(vec![vec![0], vec![1]]).unwrap(),
        };
        assert!(head_gradient(&batch, &ProjectionHead::identity(2), &TrainConfig::default()).is_err());
    }

    #[test]
    fn head_round_trips_through_emb() {
        let h = ProjectionHead::new(ndarray::array![[1.0, 0.5], [-0.25, 2.0], [0.0, 1.0]]).unwrap();
        let back = ProjectionHead::from_embedding_matrix(&h.to_embedding_matrix().unwrap()).unwrap();
        assert_eq!(back, h);
        assert_eq!(h.project(&[1.0, 1.0, 1.0]).unwrap(), vec![0.75, 3.5]);
    }
}
