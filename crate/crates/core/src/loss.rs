//! Multi-positive contrastive loss over a batch score grid.
//!
//! Video-to-text: for video `i` and each positive caption `k`, the softmax
//! runs over `{k}` plus every caption that is not positive for `i`; the
//! other positives of `i` are left out of the denominator. Terms are
//! averaged over `|T_i|` and over the batch videos.
//!
//! Text-to-video: ordinary softmax cross-entropy of each caption's owner
//! video against all batch videos, averaged over captions.
//!
//! Every loss returns its exact gradient with respect to the scores.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Which captions in a batch belong to which video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchLayout {
    positives: Vec<Vec<usize>>,
    text_owner: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BatchJson {
    positives: Vec<Vec<usize>>,
}

impl BatchLayout {
    /// `positives[i]` lists the caption indices of video `i`. Caption
    /// indices must cover `0..n` exactly once.
    pub fn new(positives: Vec<Vec<usize>>) -> Result<Self> {
        if positives.len() < 2 {
            return Err(Error::invalid("a batch needs at least 2 videos"));
        }
        let n_texts: usize = positives.iter().map(Vec::len).sum();
        let mut text_owner = vec![usize::MAX; n_texts];
        for (i, ps) in positives.iter().enumerate() {
            if ps.is_empty() {
                return Err(Error::invalid(format!("video {i} has no positive text in the batch")));
            }
            for &j in ps {
                let slot = text_owner.get_mut(j).ok_or_else(|| {
                    Error::invalid(format!("text index {j} out of range 0..{n_texts}"))
                })?;
                if *slot != usize::MAX {
                    return Err(Error::invalid(format!("text {j} belongs to more than one video")));
                }
                *slot = i;
            }
        }
        Ok(Self {
            positives,
            text_owner,
        })
    }

    /// Parses `{"positives": [[0, 1], [2]]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BatchJson =
            serde_json::from_str(text).map_err(|e| Error::invalid(format!("batch json: {e}")))?;
        Self::new(raw.positives)
    }

    pub fn n_videos(&self) -> usize {
        self.positives.len()
    }

    pub fn n_texts(&self) -> usize {
        self.text_owner.len()
    }

    pub fn positives(&self, video: usize) -> &[usize] {
        &self.positives[video]
    }

    pub fn owner(&self, text: usize) -> usize {
        self.text_owner[text]
    }

    /// Softmax candidates of the video-to-text term for (`video`, positive
    /// `target`): the target plus every caption not positive for `video`.
    pub fn v2t_candidates(&self, video: usize, target: usize) -> Vec<usize> {
        (0..self.n_texts())
            .filter(|&j| j == target || self.text_owner[j] != video)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `alpha = l_v2t / l_t2v` from the current batch, held constant for
    /// the gradient.
    Dynamic,
    Fixed(f64),
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Weighting::Dynamic => f.write_str("dynamic"),
            Weighting::Fixed(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "dynamic" {
            return Ok(Weighting::Dynamic);
        }
        let a: f64 = s
            .parse()
            .map_err(|_| Error::invalid(format!("alpha must be \"dynamic\" or a number, got {s:?}")))?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::invalid("fixed alpha must be positive"));
        }
        Ok(Weighting::Fixed(a))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub weighting: Weighting,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 0.05,
            weighting: Weighting::Dynamic,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if let Weighting::Fixed(a) = self.weighting {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::invalid("fixed alpha must be positive"));
            }
        }
        Ok(())
    }
}

fn serialize_grid<S: Serializer>(grid: &Array2<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    let rows: Vec<Vec<f64>> = grid.outer_iter().map(|r| r.to_vec()).collect();
    rows.serialize(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossOutput {
    pub l_v2t: f64,
    pub l_t2v: f64,
    pub alpha_used: f64,
    pub total: f64,
    /// Dynamic weighting hit `l_t2v = 0` and used `alpha = 1` instead.
    pub alpha_fallback: bool,
    #[serde(serialize_with = "serialize_grid")]
    pub grad_scores: Array2<f64>,
}

fn check_scores(scores: &Array2<f64>, layout: &BatchLayout, temperature: f64) -> Result<()> {
    if scores.dim() != (layout.n_videos(), layout.n_texts()) {
        return Err(Error::invalid(format!(
            "score grid is {:?}, batch is {} videos x {} texts",
            scores.dim(),
            layout.n_videos(),
            layout.n_texts()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if let Some(((i, j), v)) = scores.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {v} at ({i}, {j})")));
    }
    Ok(())
}

/// Adds the gradient of `weight * -log softmax(logits)[target]` to `grad`
/// and returns the term value. `logits` are `(index, score)` pairs already
/// divided by the temperature.
fn ce_term(
    logits: &[(usize, f64)],
    target: usize,
    weight: f64,
    temperature: f64,
    mut grad: impl FnMut(usize, f64),
) -> f64 {
    let max = logits.iter().map(|&(_, z)| z).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&(_, z)| (z - max).exp()).sum();
    let lse = max + sum.ln();
    let mut target_logit = 0.0;
    for &(c, z) in logits {
        let p = (z - lse).exp();
        let indicator = if c == target {
            target_logit = z;
            1.0
        } else {
            0.0
        };
        grad(c, weight * (p - indicator) / temperature);
    }
    lse - target_logit
}

fn v2t_impl(
    scores: &Array2<f64>,
    layout: &BatchLayout,
    temperature: f64,
    exclude_other_positives: bool,
) -> Result<(f64, Array2<f64>)> {
    check_scores(scores, layout, temperature)?;
    let n_videos = layout.n_videos();
    let mut grad = Array2::zeros(scores.dim());
    let mut loss = 0.0;
    for i in 0..n_videos {
        let positives = layout.positives(i);
        let weight = 1.0 / (n_videos as f64 * positives.len() as f64);
        for &k in positives {
            let candidates: Vec<usize> = if exclude_other_positives {
                layout.v2t_candidates(i, k)
            } else {
                (0..layout.n_texts()).collect()
            };
            let logits: Vec<(usize, f64)> = candidates
                .iter()
                .map(|&j| (j, scores[(i, j)] / temperature))
                .collect();
            loss += weight * ce_term(&logits, k, weight, temperature, |j, g| grad[(i, j)] += g);
        }
    }
    Ok((loss, grad))
}

/// Video-to-text loss with non-self positives excluded from each softmax.
pub fn loss_v2t(scores: &Array2<f64>, layout: &BatchLayout, temperature: f64) -> Result<(f64, Array2<f64>)> {
    v2t_impl(scores, layout, temperature, true)
}

/// Video-to-text loss where every caption, positive or not, sits in every
/// softmax denominator.
pub fn loss_v2t_plain(
    scores: &Array2<f64>,
    layout: &BatchLayout,
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    v2t_impl(scores, layout, temperature, false)
}

/// Text-to-video softmax cross-entropy, averaged over captions.
pub fn loss_t2v(scores: &Array2<f64>, layout: &BatchLayout, temperature: f64) -> Result<(f64, Array2<f64>)> {
    check_scores(scores, layout, temperature)?;
    let n_texts = layout.n_texts();
    let weight = 1.0 / n_texts as f64;
    let mut grad = Array2::zeros(scores.dim());
    let mut loss = 0.0;
    for j in 0..n_texts {
        let logits: Vec<(usize, f64)> = (0..layout.n_videos())
            .map(|i| (i, scores[(i, j)] / temperature))
            .collect();
        let owner = layout.owner(j);
        loss += weight * ce_term(&logits, owner, weight, temperature, |i, g| grad[(i, j)] += g);
    }
    Ok((loss, grad))
}

fn combine(
    (l_v2t, g_v2t): (f64, Array2<f64>),
    (l_t2v, g_t2v): (f64, Array2<f64>),
    weighting: Weighting,
) -> LossOutput {
    let (alpha_used, alpha_fallback) = match weighting {
        Weighting::Fixed(a) => (a, false),
        Weighting::Dynamic => {
            let ratio = l_v2t / l_t2v;
            if l_t2v > 0.0 && ratio.is_finite() {
                (ratio, false)
            } else {
                (1.0, true)
            }
        }
    };
    let grad_scores = g_v2t + &(g_t2v * alpha_used);
    LossOutput {
        l_v2t,
        l_t2v,
        alpha_used,
        total: l_v2t + alpha_used * l_t2v,
        alpha_fallback,
        grad_scores,
    }
}

/// `l_v2t + alpha * l_t2v` with positive exclusion in the video-to-text part.
pub fn mevtr_loss(scores: &Array2<f64>, layout: &BatchLayout, config: &LossConfig) -> Result<LossOutput> {
    config.validate()?;
    let v2t = loss_v2t(scores, layout, config.temperature)?;
    let t2v = loss_t2v(scores, layout, config.temperature)?;
    Ok(combine(v2t, t2v, config.weighting))
}

/// Baseline: plain softmax video-to-text (positives compete with each other)
/// plus text-to-video, summed with equal weight.
pub fn plain_softmax_loss(scores: &Array2<f64>, layout: &BatchLayout, temperature: f64) -> Result<LossOutput> {
    let v2t = loss_v2t_plain(scores, layout, temperature)?;
    let t2v = loss_t2v(scores, layout, temperature)?;
    Ok(combine(v2t, t2v, Weighting::Fixed(1.0)))
}
