use mevtr::loss::{
    loss_t2v, loss_v2t, loss_v2t_plain, mevtr_loss, plain_softmax_loss, BatchLayout, LossConfig,
    Weighting,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_layout(rng: &mut ChaCha8Rng, max_videos: usize, max_caps: usize) -> BatchLayout {
    let n = rng.random_range(2..=max_videos);
    let mut next = 0;
    let positives = (0..n)
        .map(|_| {
            let c = rng.random_range(1..=max_caps);
            let p: Vec<usize> = (next..next + c).collect();
            next += c;
            p
        })
        .collect();
    BatchLayout::new(positives).unwrap()
}

fn random_scores(rng: &mut ChaCha8Rng, layout: &BatchLayout) -> Array2<f64> {
    Array2::from_shape_fn((layout.n_videos(), layout.n_texts()), |_| rng.random_range(-1.0..1.0))
}

/// Written from the definition with plain exp/ln, no stabilization.
fn naive_v2t(s: &Array2<f64>, layout: &BatchLayout, tau: f64, exclude: bool) -> f64 {
    let n = layout.n_videos() as f64;
    let mut total = 0.0;
    for i in 0..layout.n_videos() {
        let pos = layout.positives(i);
        let mut video = 0.0;
        for &k in pos {
            let mut denom = 0.0;
            for j in 0..layout.n_texts() {
                if !exclude || j == k || !pos.contains(&j) {
                    denom += (s[(i, j)] / tau).exp();
                }
            }
            video += -((s[(i, k)] / tau).exp() / denom).ln();
        }
        total += video / pos.len() as f64;
    }
    total / n
}

fn naive_t2v(s: &Array2<f64>, layout: &BatchLayout, tau: f64) -> f64 {
    let mut total = 0.0;
    for j in 0..layout.n_texts() {
        let denom: f64 = (0..layout.n_videos()).map(|i| (s[(i, j)] / tau).exp()).sum();
        total += -((s[(layout.owner(j), j)] / tau).exp() / denom).ln();
    }
    total / layout.n_texts() as f64
}

/// Relative error between two gradients as whole vectors.
fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|x| x * x).sum().sqrt();
    let scale = a.mapv(|x| x * x).sum().sqrt().max(b.mapv(|x| x * x).sum().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn central_difference(s: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let h = 1e-6;
    let mut g = Array2::zeros(s.dim());
    for idx in 0..s.len() {
        let (i, j) = (idx / s.ncols(), idx % s.ncols());
        let mut up = s.clone();
        up[(i, j)] += h;
        let mut down = s.clone();
        down[(i, j)] -= h;
        g[(i, j)] = (f(&up) - f(&down)) / (2.0 * h);
    }
    g
}

#[test]
fn two_video_worked_example() {
    // video 0 owns texts {0, 1}, video 1 owns {2}; tau = 1 so logits are scores
    let layout = BatchLayout::new(vec![vec![0, 1], vec![2]]).unwrap();
    let s = array![[2.0, 1.0, 0.0], [0.0, 1.0, 2.0]];
    let (v2t, _) = loss_v2t(&s, &layout, 1.0).unwrap();
    let (t2v, _) = loss_t2v(&s, &layout, 1.0).unwrap();
    assert!((v2t - 0.313_850_406_862_489_1).abs() < 1e-12);
    assert!((t2v - 0.315_667_734_215_296_8).abs() < 1e-12);
    assert!((v2t - naive_v2t(&s, &layout, 1.0, true)).abs() < 1e-14);
}

#[test]
fn values_match_naive_definitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let layout = random_layout(&mut rng, 5, 4);
        let s = random_scores(&mut rng, &layout);
        let tau = rng.random_range(0.1..1.0);
        let (a, _) = loss_v2t(&s, &layout, tau).unwrap();
        let (b, _) = loss_v2t_plain(&s, &layout, tau).unwrap();
        let (c, _) = loss_t2v(&s, &layout, tau).unwrap();
        assert!((a - naive_v2t(&s, &layout, tau, true)).abs() < 1e-10);
        assert!((b - naive_v2t(&s, &layout, tau, false)).abs() < 1e-10);
        assert!((c - naive_t2v(&s, &layout, tau)).abs() < 1e-10);
        // removing competitors can only lower each term
        assert!(a <= b + 1e-12);
    }
}

#[test]
fn single_caption_batches_reduce_to_symmetric_infonce() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let n = rng.random_range(2..8);
        let layout = BatchLayout::new((0..n).map(|i| vec![i]).collect()).unwrap();
        let s = Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0f64..1.0));
        let tau: f64 = 0.07;
        let mut infonce = 0.0f64;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| (s[(i, j)] / tau).exp()).sum();
            let col: f64 = (0..n).map(|j| (s[(j, i)] / tau).exp()).sum();
            infonce -= ((s[(i, i)] / tau).exp() / row).ln() / n as f64;
            infonce -= ((s[(i, i)] / tau).exp() / col).ln() / n as f64;
        }
        let cfg = LossConfig { temperature: tau, weighting: Weighting::Fixed(1.0) };
        let out = mevtr_loss(&s, &layout, &cfg).unwrap();
        assert!((out.total - infonce).abs() < 1e-12, "{} vs {infonce}", out.total);
        let plain = plain_softmax_loss(&s, &layout, tau).unwrap();
        assert!((plain.total - infonce).abs() < 1e-12);
    }
}

#[test]
fn uniform_scores_give_log_of_candidate_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let layout = random_layout(&mut rng, 6, 3);
        let s = Array2::from_elem((layout.n_videos(), layout.n_texts()), rng.random_range(-1.0..1.0));
        let (t2v, _) = loss_t2v(&s, &layout, 0.05).unwrap();
        assert!((t2v - (layout.n_videos() as f64).ln()).abs() < 1e-9);
        let (plain, _) = loss_v2t_plain(&s, &layout, 0.05).unwrap();
        assert!((plain - (layout.n_texts() as f64).ln()).abs() < 1e-9);
        let (v2t, _) = loss_v2t(&s, &layout, 0.05).unwrap();
        let expected: f64 = (0..layout.n_videos())
            .map(|i| ((layout.n_texts() - layout.positives(i).len() + 1) as f64).ln())
            .sum::<f64>()
            / layout.n_videos() as f64;
        assert!((v2t - expected).abs() < 1e-9);
    }
}

#[test]
fn dynamic_total_is_twice_video_to_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let layout = random_layout(&mut rng, 6, 4);
        let s = random_scores(&mut rng, &layout);
        let out = mevtr_loss(&s, &layout, &LossConfig::default()).unwrap();
        assert!(!out.alpha_fallback);
        assert!((out.total - 2.0 * out.l_v2t).abs() < 1e-9);
    }
}

#[test]
fn score_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let layout = random_layout(&mut rng, 4, 3);
        let s = random_scores(&mut rng, &layout);
        let tau = rng.random_range(0.05..0.5);
        for weighting in [Weighting::Dynamic, Weighting::Fixed(0.7)] {
            let out = mevtr_loss(&s, &layout, &LossConfig { temperature: tau, weighting }).unwrap();
            // alpha is treated as a constant by the analytic gradient
            let alpha = out.alpha_used;
            let numeric = central_difference(&s, |x| {
                loss_v2t(x, &layout, tau).unwrap().0 + alpha * loss_t2v(x, &layout, tau).unwrap().0
            });
            let e = rel_err(&out.grad_scores, &numeric);
            worst = worst.max(e);
            assert!(e < 1e-4, "case {case} {weighting}: {e}");
        }
        let plain = plain_softmax_loss(&s, &layout, tau).unwrap();
        let numeric = central_difference(&s, |x| {
            loss_v2t_plain(x, &layout, tau).unwrap().0 + loss_t2v(x, &layout, tau).unwrap().0
        });
        let e = rel_err(&plain.grad_scores, &numeric);
        worst = worst.max(e);
        assert!(e < 1e-4, "case {case} plain: {e}");
    }
    assert!(worst < 1e-4);
}

#[test]
fn loss_is_shift_invariant_per_softmax() {
    // adding a constant to every score leaves every softmax unchanged
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..50 {
        let layout = random_layout(&mut rng, 5, 3);
        let s = random_scores(&mut rng, &layout);
        let shifted = &s + 0.37;
        let a = mevtr_loss(&s, &layout, &LossConfig::default()).unwrap();
        let b = mevtr_loss(&shifted, &layout, &LossConfig::default()).unwrap();
        assert!((a.total - b.total).abs() < 1e-9);
        // gradients of a shift-invariant function sum to zero
        assert!(a.grad_scores.sum().abs() < 1e-9);
    }
}
