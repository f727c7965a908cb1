//! Seeded fixtures shared by the benchmarks.

use groundaware_core::anchors::{collect_stats, AnchorGrid, AnchorStats, StatsConfig};
use groundaware_core::boxes::{Box3D, Dimensions};
use groundaware_core::detection::Detection;
use groundaware_core::evaluation::FrameData;
use groundaware_core::feature_map::FeatureMap;
use groundaware_core::gac::{MixingMatrix, OffsetField};
use groundaware_core::kitti::LabelRecord;
use groundaware_core::synthetic::{generate, SceneSpec, SplitMix64};

pub const SCALES: [f64; 9] = [20.0, 28.0, 40.0, 56.0, 80.0, 112.0, 160.0, 224.0, 320.0];
pub const RATIOS: [f64; 3] = [0.5, 0.75, 1.0];

/// Pairs of nearby boxes, most of them overlapping.
pub fn box_pairs(n: usize, seed: u64) -> Vec<(Box3D, Box3D)> {
    let mut rng = SplitMix64::new(seed);
    let random = |rng: &mut SplitMix64, at: [f64; 3]| {
        let dims = Dimensions { h: rng.uniform(1.0, 2.0), w: rng.uniform(1.4, 2.0), l: rng.uniform(3.0, 5.0) };
        let center = [at[0] + rng.uniform(-1.5, 1.5), at[1], at[2] + rng.uniform(-1.5, 1.5)];
        Box3D::new(center, dims, rng.uniform(-3.1, 3.1)).unwrap()
    };
    (0..n)
        .map(|_| {
            let a = random(&mut rng, [0.0, 1.65, 20.0]);
            let b = random(&mut rng, a.center);
            (a, b)
        })
        .collect()
}

pub struct GacInputs {
    pub features: FeatureMap,
    pub prior: FeatureMap,
    pub offsets: OffsetField,
    pub mixing: MixingMatrix,
    pub upstream: FeatureMap,
}

pub fn gac_inputs(channels: usize, rows: usize, cols: usize, seed: u64) -> GacInputs {
    let mut rng = SplitMix64::new(seed);
    let features = FeatureMap::from_fn(channels, rows, cols, |_, _, _| rng.uniform(-1.0, 1.0));
    let prior = FeatureMap::from_fn(1, rows, cols, |_, _, _| rng.uniform(0.0, 2.0));
    let residual = (0..rows * cols).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let offsets = OffsetField::from_residual(rows, cols, residual).unwrap();
    let mixing =
        MixingMatrix::new(channels, (0..channels * (channels + 1)).map(|_| rng.uniform(-0.1, 0.1)).collect()).unwrap();
    let upstream = FeatureMap::from_fn(channels, rows, cols, |_, _, _| rng.uniform(-1.0, 1.0));
    GacInputs { features, prior, offsets, mixing, upstream }
}

pub fn scene_labels(frames: usize, seed: u64) -> (SceneSpec, Vec<Vec<LabelRecord>>) {
    let spec = SceneSpec { seed, ..Default::default() };
    let labels = generate(&spec, frames).unwrap().into_iter().map(|f| f.labels).collect();
    (spec, labels)
}

pub fn anchor_setup(spec: &SceneSpec, labels: &[Vec<LabelRecord>]) -> (AnchorGrid, AnchorStats) {
    let grid = AnchorGrid::build(&spec.camera, 16, &SCALES, &RATIOS).unwrap();
    let stats = collect_stats(&grid, labels, &StatsConfig { classes: vec!["Car".into()], ..Default::default() }).unwrap();
    (grid, stats)
}

/// Ground truth with depth-jittered, randomly scored predictions.
pub fn eval_frames(frames: usize, seed: u64) -> Vec<FrameData> {
    let (_, labels) = scene_labels(frames, seed);
    let mut rng = SplitMix64::new(seed);
    labels
        .into_iter()
        .enumerate()
        .map(|(i, gt)| {
            let predictions = gt
                .iter()
                .map(|l| {
                    let mut d = Detection::from_label(l);
                    d.box3d.center[2] += rng.uniform(-1.0, 1.0);
                    d.score = rng.next_f64();
                    d
                })
                .collect();
            FrameData { id: format!("{i:06}"), ground_truth: gt, predictions }
        })
        .collect()
}
