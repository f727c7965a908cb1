use groundaware_core::boxes::{Box2D, Dimensions};
use groundaware_core::detection::Detection;
use groundaware_core::evaluation::{ap, evaluate_frames, EvalConfig, FrameData, PrCurve, RecallPositions};
use groundaware_core::kitti::LabelRecord;
use groundaware_core::synthetic::{generate, SceneSpec};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Interpolated AP recomputed from scratch at every score threshold.
fn oracle(scored: &[(f64, bool)], n_gt: u64, positions: u64, first: u64) -> f64 {
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(u64, u64)> = thresholds
        .iter()
        .map(|t| {
            let tp = scored.iter().filter(|s| s.0 >= *t && s.1).count() as u64;
            let fp = scored.iter().filter(|s| s.0 >= *t && !s.1).count() as u64;
            (tp, fp)
        })
        .collect();
    let mut sum = 0.0;
    for k in first..=positions {
        let best = points
            .iter()
            .filter(|(tp, _)| tp * positions >= k * n_gt)
            .map(|(tp, fp)| *tp as f64 / (tp + fp) as f64)
            .fold(0.0, f64::max);
        sum += best;
    }
    sum / (positions + 1 - first) as f64
}

#[test]
fn ap_matches_exhaustive_oracle_on_small_instances() {
    let levels = [0.1, 0.2, 0.3];
    let mut instances = 0;
    for n_gt in 1..=4u64 {
        for n_det in 0..=6usize {
            for hits in 0..(1u32 << n_det) {
                if u64::from(hits.count_ones()) > n_gt {
                    continue;
                }
                for code in 0..3usize.pow(n_det as u32) {
                    let scored: Vec<(f64, bool)> = (0..n_det)
                        .map(|i| (levels[code / 3usize.pow(i as u32) % 3], hits >> i & 1 == 1))
                        .collect();
                    let curve = PrCurve::from_scored(scored.clone(), n_gt);
                    assert_eq!(ap(&curve, RecallPositions::R40).unwrap(), oracle(&scored, n_gt, 40, 1));
                    assert_eq!(ap(&curve, RecallPositions::R11).unwrap(), oracle(&scored, n_gt, 10, 0));
                    instances += 1;
                }
            }
        }
    }
    assert!(instances > 100_000);
}

fn scene_frames(seed: u64, n: usize) -> Vec<FrameData> {
    let spec = SceneSpec { seed, ..Default::default() };
    generate(&spec, n)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, f)| FrameData {
            id: format!("{i:06}"),
            predictions: f.labels.iter().map(Detection::from_label).collect(),
            ground_truth: f.labels,
        })
        .collect()
}

#[test]
fn self_evaluation_scores_one_everywhere() {
    let frames = scene_frames(8, 200);
    let r = evaluate_frames(&frames, &EvalConfig::default());
    for m in &r.metrics {
        assert_eq!(m.value, Some(1.0), "{}", m.key());
    }
}

fn jitter(frames: &mut [FrameData], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for f in frames.iter_mut() {
        for (i, d) in f.predictions.iter_mut().enumerate() {
            d.score = ((i * 7 + f.id.len()) % 5) as f64 / 5.0;
            d.box3d.center[2] += rand::Rng::random_range(&mut rng, -1.0..1.0);
        }
    }
}

#[test]
fn order_of_frames_and_equal_scores_is_irrelevant() {
    let mut frames = scene_frames(9, 150);
    jitter(&mut frames, 1);
    let base = evaluate_frames(&frames, &EvalConfig::default());
    let mut shuffled = frames.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    shuffled.shuffle(&mut rng);
    for f in &mut shuffled {
        f.predictions.shuffle(&mut rng);
    }
    assert_eq!(evaluate_frames(&shuffled, &EvalConfig::default()).metrics, base.metrics);
}

fn far_detection(score: f64) -> Detection {
    Detection {
        category: "Car".into(),
        box2d: Box2D::new(0.0, 0.0, 60.0, 60.0).unwrap(),
        box3d: groundaware_core::Box3D::new([-40.0, 1.65, 80.0], Dimensions { h: 1.5, w: 1.6, l: 3.9 }, 0.0).unwrap(),
        alpha: 0.0,
        score,
    }
}

#[test]
fn false_positives_never_help_and_true_positives_never_hurt() {
    let mut frames = scene_frames(10, 100);
    jitter(&mut frames, 3);
    // Drop some detections so recall has room to grow.
    let mut partial = frames.clone();
    for f in &mut partial {
        f.predictions.truncate(f.predictions.len() / 2);
    }
    let base = evaluate_frames(&partial, &EvalConfig::default());
    let mut noisy = partial.clone();
    noisy[0].predictions.push(far_detection(0.95));
    noisy[5].predictions.push(far_detection(0.01));
    let with_fp = evaluate_frames(&noisy, &EvalConfig::default());
    for (b, n) in base.metrics.iter().zip(&with_fp.metrics) {
        assert!(n.value <= b.value, "{}", b.key());
    }
    // Restoring perfect copies of the dropped objects at the top score only adds hits.
    let mut extra = partial.clone();
    for (e, f) in extra.iter_mut().zip(&frames) {
        for d in &f.predictions[f.predictions.len() / 2..] {
            let g: &LabelRecord = f.ground_truth.iter().find(|g| g.bbox2d == d.box2d).unwrap();
            e.predictions.push(Detection { score: 2.0, ..Detection::from_label(g) });
        }
    }
    let more = evaluate_frames(&extra, &EvalConfig::default());
    for (b, m) in base.metrics.iter().zip(&more.metrics) {
        assert!(m.value >= b.value, "{}", b.key());
    }
}
