//! Retrieval metrics for one-to-many video-text correspondences, subset
//! partitioning, and the caption-collapse statistic.
//!
//! Candidates are ranked by descending score; equal scores are ordered by
//! candidate index, so every candidate gets a distinct rank. The number of
//! positives whose score ties some other candidate is reported as `ties`.

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::similarity::{dot, unit, SimilarityMatrix};
use crate::trainer::ProjectionHead;

pub const DEFAULT_KS: [usize; 4] = [1, 5, 10, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "v2t")]
    VideoToText,
    #[serde(rename = "t2v")]
    TextToVideo,
}

/// Recall variants at one cutoff. For text-to-video queries (one positive
/// each) the three coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAtK {
    pub k: usize,
    pub average: f64,
    pub one_hit: f64,
    pub all_hit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub n_queries: usize,
    /// Median over queries of the best-ranked positive.
    pub median_rank: f64,
    pub ties: usize,
    pub recalls: Vec<RecallAtK>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&RecallAtK> {
        self.recalls.iter().find(|r| r.k == k)
    }
}

fn check_ks(ks: &[usize]) -> Result<()> {
    if ks.is_empty() {
        return Err(Error::invalid("at least one cutoff k is required"));
    }
    if ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("cutoffs must be positive and strictly ascending"));
    }
    Ok(())
}

/// 1-based rank of `candidate` among `scores`, plus whether it ties another.
fn rank_of(scores: &[f64], candidate: usize) -> (usize, bool) {
    let s = scores[candidate];
    let mut ahead = 0;
    let mut tied = false;
    for (c, &other) in scores.iter().enumerate() {
        if c == candidate {
            continue;
        }
        if other == s {
            tied = true;
            if c < candidate {
                ahead += 1;
            }
        } else if other > s {
            ahead += 1;
        }
    }
    (ahead + 1, tied)
}

pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Aggregates per-query positive ranks into a report.
fn aggregate(task: Task, per_query: &[Vec<usize>], ties: usize, ks: &[usize]) -> MetricsReport {
    let n = per_query.len() as f64;
    let recalls = ks
        .iter()
        .map(|&k| {
            let (mut avg, mut one, mut all) = (0.0, 0.0, 0.0);
            for ranks in per_query {
                let hits = ranks.iter().filter(|&&r| r <= k).count();
                avg += hits as f64 / ranks.len() as f64;
                one += f64::from(u8::from(hits > 0));
                all += f64::from(u8::from(hits == ranks.len()));
            }
            RecallAtK {
                k,
                average: avg / n,
                one_hit: one / n,
                all_hit: all / n,
            }
        })
        .collect();
    let mut best: Vec<f64> = per_query
        .iter()
        .map(|r| *r.iter().min().expect("non-empty positives") as f64)
        .collect();
    MetricsReport {
        task,
        n_queries: per_query.len(),
        median_rank: median(&mut best),
        ties,
        recalls,
    }
}

/// Video queries against all texts.
pub fn evaluate_v2t(scores: &SimilarityMatrix, corpus: &Corpus, ks: &[usize]) -> Result<MetricsReport> {
    scores.check_matches(corpus)?;
    check_ks(ks)?;
    let mut ties = 0;
    let mut per_query = Vec::with_capacity(corpus.videos().len());
    for i in 0..corpus.videos().len() {
        let positives = corpus.texts_of(i);
        if positives.is_empty() {
            return Err(Error::invalid(format!("video {i} has no texts")));
        }
        let row = scores.row(i);
        let ranks = positives
            .iter()
            .map(|&j| {
                let (r, tied) = rank_of(row, j);
                ties += usize::from(tied);
                r
            })
            .collect();
        per_query.push(ranks);
    }
    Ok(aggregate(Task::VideoToText, &per_query, ties, ks))
}

/// Text queries against all videos; each text has its owner as the single
/// positive.
pub fn evaluate_t2v(scores: &SimilarityMatrix, corpus: &Corpus, ks: &[usize]) -> Result<MetricsReport> {
    scores.check_matches(corpus)?;
    check_ks(ks)?;
    if corpus.texts().is_empty() {
        return Err(Error::invalid("corpus has no texts"));
    }
    let mut ties = 0;
    let per_query: Vec<Vec<usize>> = (0..corpus.texts().len())
        .map(|j| {
            let (r, tied) = rank_of(&scores.column(j), corpus.text_owner(j));
            ties += usize::from(tied);
            vec![r]
        })
        .collect();
    Ok(aggregate(Task::TextToVideo, &per_query, ties, ks))
}

pub fn evaluate(scores: &SimilarityMatrix, corpus: &Corpus, task: Task, ks: &[usize]) -> Result<MetricsReport> {
    match task {
        Task::VideoToText => evaluate_v2t(scores, corpus, ks),
        Task::TextToVideo => evaluate_t2v(scores, corpus, ks),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubsetFamily {
    Duration,
    Events,
}

/// A named bin over (duration in seconds, event count).
#[derive(Debug, Clone, Copy)]
pub struct SubsetSpec {
    pub name: &'static str,
    pub predicate: fn(f64, usize) -> bool,
}

impl SubsetFamily {
    /// Duration bins are half-open: `[0,60)`, `[60,120)`, `[120,180)`,
    /// `[180,inf)`. Event bins: `<=4`, `5..=12`, `>=13`.
    pub fn specs(self) -> Vec<SubsetSpec> {
        match self {
            SubsetFamily::Duration => vec![
                SubsetSpec { name: "test-S", predicate: |d, _| d < 60.0 },
                SubsetSpec { name: "test-M", predicate: |d, _| (60.0..120.0).contains(&d) },
                SubsetSpec { name: "test-L", predicate: |d, _| (120.0..180.0).contains(&d) },
                SubsetSpec { name: "test-XL", predicate: |d, _| d >= 180.0 },
            ],
            SubsetFamily::Events => vec![
                SubsetSpec { name: "test-E1", predicate: |_, e| e <= 4 },
                SubsetSpec { name: "test-E2", predicate: |_, e| (5..=12).contains(&e) },
                SubsetSpec { name: "test-E3", predicate: |_, e| e >= 13 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    pub video_ids: Vec<String>,
}

/// Splits the corpus videos into the family's bins, in bin order. Empty
/// bins are kept.
pub fn partition_subsets(corpus: &Corpus, family: SubsetFamily) -> Vec<Subset> {
    let specs = family.specs();
    let mut out: Vec<Subset> = specs
        .iter()
        .map(|s| Subset {
            name: s.name.to_string(),
            video_ids: Vec::new(),
        })
        .collect();
    for (i, v) in corpus.videos().iter().enumerate() {
        let events = corpus.event_count(i);
        let slot = specs
            .iter()
            .position(|s| (s.predicate)(v.duration_seconds, events))
            .expect("bins cover every non-negative duration and event count");
        out[slot].video_ids.push(v.video_id.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    pub name: String,
    pub n_videos: usize,
    /// `None` for an empty subset.
    pub metrics: Option<MetricsReport>,
}

/// Metrics restricted to each subset: queries and candidates both come from
/// the subset's videos and their captions.
pub fn evaluate_subsets(
    scores: &SimilarityMatrix,
    corpus: &Corpus,
    task: Task,
    ks: &[usize],
    family: SubsetFamily,
) -> Result<Vec<SubsetMetrics>> {
    scores.check_matches(corpus)?;
    partition_subsets(corpus, family)
        .into_iter()
        .map(|subset| {
            if subset.video_ids.is_empty() {
                return Ok(SubsetMetrics {
                    name: subset.name,
                    n_videos: 0,
                    metrics: None,
                });
            }
            let sub = corpus.subset(subset.video_ids.iter().map(String::as_str))?;
            let vid_idx: Vec<usize> = corpus
                .videos()
                .iter()
                .enumerate()
                .filter(|(_, v)| subset.video_ids.contains(&v.video_id))
                .map(|(i, _)| i)
                .collect();
            let text_idx: Vec<usize> = (0..corpus.texts().len())
                .filter(|&j| vid_idx.contains(&corpus.text_owner(j)))
                .collect();
            let sub_scores = scores.select(&vid_idx, &text_idx);
            Ok(SubsetMetrics {
                name: subset.name,
                n_videos: vid_idx.len(),
                metrics: Some(evaluate(&sub_scores, &sub, task, ks)?),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoCollapse {
    pub video: String,
    pub events: usize,
    /// `None` when undefined (a single caption with self-pairs excluded).
    pub sim_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCountGroup {
    pub events: usize,
    pub videos: usize,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub include_self_pairs: bool,
    pub per_video: Vec<VideoCollapse>,
    pub mean: Option<f64>,
    /// Population variance across videos.
    pub variance: Option<f64>,
    pub by_event_count: Vec<EventCountGroup>,
}

pub(crate) fn mean_variance(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var))
}

/// Mean pairwise cosine of each video's captions, `sim_t = (1/N^2) sum_m
/// sum_n cos(t_m, t_n)` with self-pairs, or the mean over the `N(N-1)`
/// ordered pairs `m != n` without them. Captions are projected through
/// `head` first when given.
pub fn collapse_diagnostic(
    corpus: &Corpus,
    head: Option<&ProjectionHead>,
    include_self_pairs: bool,
) -> Result<CollapseReport> {
    let mut per_video = Vec::with_capacity(corpus.videos().len());
    for (i, v) in corpus.videos().iter().enumerate() {
        let texts = corpus
            .texts_of(i)
            .iter()
            .map(|&j| {
                let raw: Vec<f64> = corpus.texts()[j]
                    .embedding
                    .row(0)
                    .iter()
                    .map(|&x| f64::from(x))
                    .collect();
                let projected = match head {
                    Some(h) => h.project(&raw)?,
                    None => raw,
                };
                unit(&projected).map_err(|_| {
                    Error::invalid(format!("text {:?} has zero norm", corpus.texts()[j].text_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let n = texts.len();
        if n == 0 {
            return Err(Error::invalid(format!("video {:?} has no texts", v.video_id)));
        }
        let mut total = 0.0;
        for m in 0..n {
            for k in 0..n {
                if m == k {
                    if include_self_pairs {
                        total += dot(&texts[m], &texts[m]);
                    }
                } else {
                    total += dot(&texts[m], &texts[k]);
                }
            }
        }
        let sim_t = if include_self_pairs {
            Some(total / (n * n) as f64)
        } else if n > 1 {
            Some(total / (n * (n - 1)) as f64)
        } else {
            None
        };
        per_video.push(VideoCollapse {
            video: v.video_id.clone(),
            events: n,
            sim_t,
        });
    }

    let defined: Vec<f64> = per_video.iter().filter_map(|p| p.sim_t).collect();
    let overall = mean_variance(&defined);
    let mut counts: Vec<usize> = per_video.iter().map(|p| p.events).collect();
    counts.sort_unstable();
    counts.dedup();
    let by_event_count = counts
        .into_iter()
        .filter_map(|events| {
            let vals: Vec<f64> = per_video
                .iter()
                .filter(|p| p.events == events)
                .filter_map(|p| p.sim_t)
                .collect();
            mean_variance(&vals).map(|(mean, variance)| EventCountGroup {
                events,
                videos: vals.len(),
                mean,
                variance,
            })
        })
        .collect();
    Ok(CollapseReport {
        include_self_pairs,
        per_video,
        mean: overall.map(|m| m.0),
        variance: overall.map(|m| m.1),
        by_event_count,
    })
}
