//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numeric code.

#![allow(dead_code)]

use mevtr::corpus::{Corpus, EmbeddingMatrix, TextItem, VideoItem};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn rows_f64(m: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| r.iter().map(|&x| f64::from(x)).collect())
        .collect()
}

/// Sum over frames of the cosine distance to the closest medoid.
pub fn medoid_cost(frames: &[Vec<f64>], medoids: &[usize]) -> f64 {
    frames
        .iter()
        .map(|f| {
            medoids
                .iter()
                .map(|&m| (1.0 - cosine(f, &frames[m])).max(0.0))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Minimum cost over every size-`k` medoid set.
pub fn exhaustive_optimum(frames: &[Vec<f64>], k: usize) -> f64 {
    combinations(frames.len(), k)
        .iter()
        .map(|c| medoid_cost(frames, c))
        .fold(f64::INFINITY, f64::min)
}

/// No single medoid/non-medoid exchange lowers the cost by more than `eps`.
pub fn is_swap_local(frames: &[Vec<f64>], medoids: &[usize], eps: f64) -> bool {
    let base = medoid_cost(frames, medoids);
    for slot in 0..medoids.len() {
        for x in 0..frames.len() {
            if medoids.contains(&x) {
                continue;
            }
            let mut trial = medoids.to_vec();
            trial[slot] = x;
            if medoid_cost(frames, &trial) < base - eps {
                return false;
            }
        }
    }
    true
}

/// Positions (1-based) of `positives` in the candidate list sorted by
/// descending score, index ascending on ties.
pub fn full_sort_ranks(scores: &[f64], positives: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    positives
        .iter()
        .map(|p| order.iter().position(|c| c == p).unwrap() + 1)
        .collect()
}

#[derive(Debug, PartialEq)]
pub struct OracleMetrics {
    pub median_rank: f64,
    /// (k, average, one_hit, all_hit)
    pub recalls: Vec<(usize, f64, f64, f64)>,
}

pub fn oracle_metrics(per_query: &[Vec<usize>], ks: &[usize]) -> OracleMetrics {
    let n = per_query.len() as f64;
    let recalls = ks
        .iter()
        .map(|&k| {
            let mut sums = (0.0, 0.0, 0.0);
            for ranks in per_query {
                let inside = ranks.iter().filter(|&&r| r <= k).count();
                sums.0 += inside as f64 / ranks.len() as f64;
                sums.1 += if inside >= 1 { 1.0 } else { 0.0 };
                sums.2 += if inside == ranks.len() { 1.0 } else { 0.0 };
            }
            (k, sums.0 / n, sums.1 / n, sums.2 / n)
        })
        .collect();
    let mut best: Vec<f64> = per_query
        .iter()
        .map(|r| *r.iter().min().unwrap() as f64)
        .collect();
    best.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = best.len();
    let median_rank = if m % 2 == 1 {
        best[m / 2]
    } else {
        0.5 * (best[m / 2 - 1] + best[m / 2])
    };
    OracleMetrics {
        median_rank,
        recalls,
    }
}

/// Video-to-text oracle over a row-major score grid.
pub fn oracle_v2t(grid: &[Vec<f64>], owners: &[usize], ks: &[usize]) -> OracleMetrics {
    let per_query: Vec<Vec<usize>> = grid
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let pos: Vec<usize> = (0..owners.len()).filter(|&j| owners[j] == i).collect();
            full_sort_ranks(row, &pos)
        })
        .collect();
    oracle_metrics(&per_query, ks)
}

pub fn oracle_t2v(grid: &[Vec<f64>], owners: &[usize], ks: &[usize]) -> OracleMetrics {
    let per_query: Vec<Vec<usize>> = owners
        .iter()
        .enumerate()
        .map(|(j, &o)| {
            let column: Vec<f64> = grid.iter().map(|row| row[j]).collect();
            full_sort_ranks(&column, &[o])
        })
        .collect();
    oracle_metrics(&per_query, ks)
}

pub fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if n > 0.1 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Corpus with the given caption counts, random unit embeddings, and
/// durations drawn from `durations`.
pub fn build_corpus(
    rng: &mut ChaCha8Rng,
    captions: &[usize],
    frames: usize,
    dim: usize,
    durations: &[f64],
) -> Corpus {
    let mut videos = Vec::new();
    let mut texts = Vec::new();
    for (i, &n) in captions.iter().enumerate() {
        let video_id = format!("vid{i}");
        let mut text_ids = Vec::new();
        for c in 0..n {
            let text_id = format!("vid{i}_cap{c}");
            texts.push(TextItem {
                text_id: text_id.clone(),
                embedding: EmbeddingMatrix::new(1, dim, random_unit(rng, dim)).unwrap(),
                video_id: video_id.clone(),
            });
            text_ids.push(text_id);
        }
        let rows: Vec<Vec<f32>> = (0..frames).map(|_| random_unit(rng, dim)).collect();
        videos.push(VideoItem {
            video_id,
            frames: EmbeddingMatrix::from_rows(&rows).unwrap(),
            duration_seconds: durations[i % durations.len()],
            text_ids,
        });
    }
    Corpus::new(videos, texts).unwrap()
}
