mod common;

use common::{exhaustive_optimum, is_swap_local, medoid_cost, rows_f64};
use mevtr::corpus::{generate_synthetic, EmbeddingMatrix, SyntheticConfig};
use mevtr::keyevents::{clustering_objective, select_key_events, ClusterConfig, Init};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_frames(rng: &mut ChaCha8Rng) -> EmbeddingMatrix {
    let n = rng.random_range(1..=8);
    let dim = rng.random_range(2..=5);
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for _ in 0..n {
        // occasional exact duplicates exercise the tie rules
        if !rows.is_empty() && rng.random_bool(0.15) {
            let pick = rows[rng.random_range(0..rows.len())].clone();
            rows.push(pick);
        } else {
            rows.push(common::random_unit(rng, dim));
        }
    }
    EmbeddingMatrix::from_rows(&rows).unwrap()
}

#[test]
fn matches_exhaustive_search_or_is_swap_local() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut exact = 0;
    for case in 0..200 {
        let frames = random_frames(&mut rng);
        let k = rng.random_range(1..=3);
        let init = if case % 2 == 0 { Init::EvenlySpaced } else { Init::PlusPlus };
        let cfg = ClusterConfig { k, init, seed: case, ..ClusterConfig::default() };
        let key = select_key_events(&frames, &cfg).unwrap();
        key.validate_for(&frames).unwrap();
        let rows = rows_f64(&frames);
        let cost = medoid_cost(&rows, &key.medoid_indices);
        assert!((cost - key.objective).abs() < 1e-9, "case {case}: reported objective");
        let best = exhaustive_optimum(&rows, key.k());
        if (cost - best).abs() <= 1e-9 {
            exact += 1;
        } else {
            assert!(is_swap_local(&rows, &key.medoid_indices, 1e-12), "case {case}");
        }
        assert!(key.iterations_used <= cfg.max_iterations);
        for w in key.trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "case {case}: trace {:?}", key.trace);
        }
    }
    assert!(exact > 150, "only {exact} of 200 reached the global optimum");
}

#[test]
fn objective_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let frames = random_frames(&mut rng);
        let key = select_key_events(&frames, &ClusterConfig { k: 2, ..Default::default() }).unwrap();
        let again = clustering_objective(&frames, &key).unwrap();
        assert!((again - key.objective).abs() < 1e-12);
    }
}

#[test]
fn recovers_well_separated_events() {
    // with tight noise each frame's nearest anchor is its own event
    let sc = generate_synthetic(&SyntheticConfig {
        n_videos: 8,
        events_per_video: (3, 4),
        frames_per_event: (4, 6),
        dim: 16,
        event_separation: 0.9,
        noise_scale: 0.05,
        frame_interval_s: 5.0,
        seed: 21,
    })
    .unwrap();
    for ((video, labels), anchors) in sc.corpus.videos().iter().zip(&sc.labels).zip(&sc.anchors) {
        let events = anchors.rows();
        let key = select_key_events(&video.frames, &ClusterConfig { k: events, ..Default::default() }).unwrap();
        let frames = rows_f64(&video.frames);
        let anchor_rows = rows_f64(anchors);
        for (f, &label) in frames.iter().zip(&labels.frame_labels) {
            let nearest = (0..events)
                .max_by(|&a, &b| {
                    common::cosine(f, &anchor_rows[a])
                        .partial_cmp(&common::cosine(f, &anchor_rows[b]))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(nearest, label);
        }
        // one medoid per event and clusters equal the event partition
        let medoid_labels: Vec<usize> =
            key.medoid_indices.iter().map(|&m| labels.frame_labels[m]).collect();
        let mut sorted = medoid_labels.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), events, "video {}", video.video_id);
        for (a, &label) in key.assignments.iter().zip(&labels.frame_labels) {
            assert_eq!(medoid_labels[*a], label);
        }
    }
}
