//! Key-event selection: K-Medoids over frame embeddings with cosine
//! distance `1 - cos(a, b)`.
//!
//! The clusterer alternates assignment and medoid update until the objective
//! stops decreasing by at least `tolerance`, then polishes the result with
//! best-improvement medoid swaps so the returned configuration is a swap-local
//! optimum. Both phases share the `max_iterations` budget.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use std::collections::{HashMap, HashSet};

use crate::corpus::{Corpus, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::io::{parse_jsonl, to_jsonl};

/// Swaps must beat the current objective by more than this to be taken.
const SWAP_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Frame indices `floor(i * rows / k)`.
    EvenlySpaced,
    /// Seeded k-medoids++ style: each new medoid drawn with probability
    /// proportional to its distance from the nearest chosen medoid.
    PlusPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    pub k: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub init: Init,
    /// Run the swap phase after alternation converges.
    pub swap_refine: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            k: 16,
            max_iterations: 60,
            tolerance: 1e-5,
            seed: 0,
            init: Init::EvenlySpaced,
            swap_refine: true,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be >= 1"));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyEventSet {
    /// Ascending frame indices.
    pub medoid_indices: Vec<usize>,
    /// Per frame, an index into `medoid_indices`.
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations_used: usize,
    /// Objective after initial assignment and after every sweep.
    pub trace: Vec<f64>,
}

impl KeyEventSet {
    pub fn k(&self) -> usize {
        self.medoid_indices.len()
    }

    /// Checks the structural invariants against `frames`.
    pub fn validate_for(&self, frames: &EmbeddingMatrix) -> Result<()> {
        let n = frames.rows();
        if self.assignments.len() != n {
            return Err(Error::invalid(format!(
                "{} assignments for {n} frames",
                self.assignments.len()
            )));
        }
        if self.medoid_indices.is_empty() {
            return Err(Error::invalid("no medoids"));
        }
        if self.medoid_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("medoid indices must be strictly ascending"));
        }
        if self.medoid_indices.last().is_some_and(|&m| m >= n) {
            return Err(Error::invalid("medoid index out of range"));
        }
        if self.assignments.iter().any(|&a| a >= self.k()) {
            return Err(Error::invalid("assignment refers to a missing medoid"));
        }
        for (c, &m) in self.medoid_indices.iter().enumerate() {
            if self.assignments[m] != c {
                return Err(Error::invalid(format!("medoid {m} not in its own cluster")));
            }
        }
        Ok(())
    }
}

/// Pairwise cosine distances between unit rows, clamped to be non-negative.
/// Identical directions are exactly 0.
pub(crate) struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub(crate) fn new(frames: &EmbeddingMatrix) -> Result<Self> {
        let n = frames.rows();
        let mut unit = Vec::with_capacity(n);
        for (i, row) in frames.iter_rows().enumerate() {
            let v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("frame {i} has zero norm")));
            }
            unit.push(v.into_iter().map(|x| x / norm).collect::<Vec<_>>());
        }
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let dist = if unit[i] == unit[j] {
                    0.0
                } else {
                    let cos: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
                    (1.0 - cos).max(0.0)
                };
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        Ok(Self { n, d })
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

/// Assigns every frame to its nearest medoid (lowest cluster index on ties);
/// medoids always stay in their own cluster. Returns the objective.
fn assign(dist: &DistanceMatrix, medoids: &[usize], assignments: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (o, slot) in assignments.iter_mut().enumerate() {
        if let Some(c) = medoids.iter().position(|&m| m == o) {
            *slot = c;
            continue;
        }
        let mut best = 0;
        let mut best_d = dist.get(o, medoids[0]);
        for (c, &m) in medoids.iter().enumerate().skip(1) {
            let d = dist.get(o, m);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        *slot = best;
        total += best_d;
    }
    total
}

/// Replaces each medoid by the member with the smallest summed distance to
/// its cluster; ties go to the lowest frame index.
fn update(dist: &DistanceMatrix, medoids: &mut [usize], assignments: &[usize]) {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); medoids.len()];
    for (o, &c) in assignments.iter().enumerate() {
        members[c].push(o);
    }
    for (c, group) in members.iter().enumerate() {
        let mut best = medoids[c];
        let mut best_cost: f64 = group.iter().map(|&o| dist.get(best, o)).sum();
        for &cand in group {
            let cost: f64 = group.iter().map(|&o| dist.get(cand, o)).sum();
            if cost < best_cost || (cost == best_cost && cand < best) {
                best = cand;
                best_cost = cost;
            }
        }
        medoids[c] = best;
    }
}

/// Finds the best single swap (medoid slot, replacement frame), if any
/// improves the objective by more than `SWAP_EPS`.
fn best_swap(dist: &DistanceMatrix, medoids: &[usize], current: f64) -> Option<(usize, usize)> {
    let n = dist.n;
    // nearest medoid slot and distance, and the distance to the runner-up
    let mut near = vec![(0usize, f64::INFINITY); n];
    let mut second = vec![f64::INFINITY; n];
    for o in 0..n {
        for (c, &m) in medoids.iter().enumerate() {
            let d = dist.get(o, m);
            if d < near[o].1 {
                second[o] = near[o].1;
                near[o] = (c, d);
            } else if d < second[o] {
                second[o] = d;
            }
        }
    }
    let mut is_medoid = vec![false; n];
    for &m in medoids {
        is_medoid[m] = true;
    }

    let mut best: Option<(usize, usize, f64)> = None;
    for cand in (0..n).filter(|&x| !is_medoid[x]) {
        for slot in 0..medoids.len() {
            let total: f64 = (0..n)
                .filter(|&o| o != cand)
                .map(|o| {
                    let keep = if near[o].0 == slot { second[o] } else { near[o].1 };
                    dist.get(o, cand).min(keep)
                })
                .sum();
            if total < current - SWAP_EPS && best.is_none_or(|(_, _, b)| total < b) {
                best = Some((slot, cand, total));
            }
        }
    }
    best.map(|(slot, cand, _)| (slot, cand))
}

fn initial_medoids(dist: &DistanceMatrix, config: &ClusterConfig) -> Vec<usize> {
    let n = dist.n;
    let k = config.k;
    match config.init {
        Init::EvenlySpaced => (0..k).map(|i| i * n / k).collect(),
        Init::PlusPlus => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut medoids = vec![rng.random_range(0..n)];
            let mut nearest: Vec<f64> = (0..n).map(|o| dist.get(o, medoids[0])).collect();
            nearest[medoids[0]] = 0.0;
            while medoids.len() < k {
                let total: f64 = nearest.iter().sum();
                let next = if total > 0.0 {
                    let mut target = rng.random::<f64>() * total;
                    let mut pick = None;
                    for (o, &w) in nearest.iter().enumerate() {
                        if w > 0.0 {
                            pick = Some(o);
                            if target < w {
                                break;
                            }
                            target -= w;
                        }
                    }
                    pick.expect("positive total weight")
                } else {
                    (0..n).find(|o| !medoids.contains(o)).expect("rows > k")
                };
                medoids.push(next);
                for (o, w) in nearest.iter_mut().enumerate() {
                    *w = w.min(if o == next { 0.0 } else { dist.get(o, next) });
                }
            }
            medoids
        }
    }
}

/// Selects up to `config.k` key-event frames. With `frames.rows() <= k`
/// every frame is its own medoid.
pub fn select_key_events(frames: &EmbeddingMatrix, config: &ClusterConfig) -> Result<KeyEventSet> {
    config.validate()?;
    let n = frames.rows();
    if n == 0 || frames.dim() == 0 {
        return Err(Error::invalid("cannot cluster an empty frame matrix"));
    }
    let dist = DistanceMatrix::new(frames)?;
    if n <= config.k {
        return Ok(KeyEventSet {
            medoid_indices: (0..n).collect(),
            assignments: (0..n).collect(),
            objective: 0.0,
            iterations_used: 0,
            trace: vec![0.0],
        });
    }

    let mut medoids = initial_medoids(&dist, config);
    let mut assignments = vec![0; n];
    let mut objective = assign(&dist, &medoids, &mut assignments);
    let mut trace = vec![objective];
    let mut iterations = 0;

    while iterations < config.max_iterations {
        let mut next = medoids.clone();
        update(&dist, &mut next, &assignments);
        let mut next_assign = vec![0; n];
        let next_obj = assign(&dist, &next, &mut next_assign);
        iterations += 1;
        let decrease = objective - next_obj;
        if next_obj <= objective {
            medoids = next;
            assignments = next_assign;
            objective = next_obj;
        }
        trace.push(objective);
        debug_assert!(trace.windows(2).all(|w| w[1] <= w[0]));
        if decrease < config.tolerance {
            break;
        }
    }

    if config.swap_refine {
        while iterations < config.max_iterations {
            let Some((slot, cand)) = best_swap(&dist, &medoids, objective) else {
                break;
            };
            let mut next = medoids.clone();
            next[slot] = cand;
            let mut next_assign = vec![0; n];
            let next_obj = assign(&dist, &next, &mut next_assign);
            iterations += 1;
            if next_obj >= objective {
                break;
            }
            medoids = next;
            assignments = next_assign;
            objective = next_obj;
            trace.push(objective);
        }
    }

    // sort medoids ascending and remap cluster ids
    let mut order: Vec<usize> = (0..medoids.len()).collect();
    order.sort_by_key(|&c| medoids[c]);
    let mut remap = vec![0; medoids.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old] = new;
    }
    let medoid_indices = order.iter().map(|&c| medoids[c]).collect();
    let assignments = assignments.iter().map(|&c| remap[c]).collect();

    Ok(KeyEventSet {
        medoid_indices,
        assignments,
        objective,
        iterations_used: iterations,
        trace,
    })
}

/// Total cosine distance of every frame to its assigned medoid.
pub fn clustering_objective(frames: &EmbeddingMatrix, key: &KeyEventSet) -> Result<f64> {
    key.validate_for(frames)?;
    let dist = DistanceMatrix::new(frames)?;
    Ok(key
        .assignments
        .iter()
        .enumerate()
        .map(|(o, &c)| {
            let m = key.medoid_indices[c];
            if m == o {
                0.0
            } else {
                dist.get(o, m)
            }
        })
        .sum())
}

/// Rows of `frames` at the medoid indices.
pub fn gather_key_embeddings(frames: &EmbeddingMatrix, key: &KeyEventSet) -> Result<EmbeddingMatrix> {
    if let Some(&bad) = key.medoid_indices.iter().find(|&&m| m >= frames.rows()) {
        return Err(Error::invalid(format!(
            "stale key-event set: medoid {bad} but only {} frames",
            frames.rows()
        )));
    }
    frames.select_rows(&key.medoid_indices)
}

/// One line of a key-event file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyEventRecord {
    pub video: String,
    pub medoids: Vec<usize>,
    pub assignments: Vec<usize>,
    pub objective: f64,
    pub iterations: usize,
}

impl KeyEventRecord {
    pub fn new(video: impl Into<String>, key: &KeyEventSet) -> Self {
        Self {
            video: video.into(),
            medoids: key.medoid_indices.clone(),
            assignments: key.assignments.clone(),
            objective: key.objective,
            iterations: key.iterations_used,
        }
    }
}

pub fn key_events_to_jsonl(records: &[KeyEventRecord]) -> Result<String> {
    to_jsonl(records)
}

/// Parses a key-event file, checking per line that medoids are ascending
/// and that assignments point at a medoid.
pub fn parse_key_events(text: &str) -> Result<Vec<KeyEventRecord>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, rec) in parse_jsonl::<KeyEventRecord>(text)? {
        let bad = |message: String| Error::Manifest { line, message };
        if !seen.insert(rec.video.clone()) {
            return Err(bad(format!("duplicate video {:?}", rec.video)));
        }
        if rec.medoids.is_empty() || rec.medoids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("medoids must be non-empty and strictly ascending".into()));
        }
        if rec.assignments.len() <= *rec.medoids.last().expect("non-empty") {
            return Err(bad("medoid index beyond the assigned frames".into()));
        }
        if rec.assignments.iter().any(|&a| a >= rec.medoids.len()) {
            return Err(bad("assignment does not name a medoid".into()));
        }
        if !rec.objective.is_finite() || rec.objective < 0.0 {
            return Err(bad("objective must be finite and non-negative".into()));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Key-event rows per video id, taken from the corpus frames. Every corpus
/// video must have a record whose frame count matches.
pub fn key_event_embeddings(
    corpus: &Corpus,
    records: &[KeyEventRecord],
) -> Result<HashMap<String, EmbeddingMatrix>> {
    let by_id: HashMap<&str, &KeyEventRecord> = records.iter().map(|r| (r.video.as_str(), r)).collect();
    corpus
        .videos()
        .iter()
        .map(|v| {
            let rec = by_id
                .get(v.video_id.as_str())
                .ok_or_else(|| Error::invalid(format!("no key events for video {:?}", v.video_id)))?;
            if rec.assignments.len() != v.frames.rows() {
                return Err(Error::invalid(format!(
                    "key events for {:?} cover {} frames, video has {}",
                    v.video_id,
                    rec.assignments.len(),
                    v.frames.rows()
                )));
            }
            Ok((v.video_id.clone(), v.frames.select_rows(&rec.medoids)?))
        })
        .collect()
}
