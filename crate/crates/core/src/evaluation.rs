//! KITTI-style average precision for 2D, BEV and 3D boxes.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::boxes::{ioa_2d, iou_2d, iou_3d, iou_bev};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::kitti::{parse_frame_file_name, parse_labels, LabelRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Criterion {
    Box2D,
    Bev,
    Box3D,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Box2D, Criterion::Bev, Criterion::Box3D];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Box2D => "2D",
            Criterion::Bev => "BEV",
            Criterion::Box3D => "3D",
        }
    }

    pub fn overlap(self, det: &Detection, gt: &LabelRecord) -> f64 {
        match self {
            Criterion::Box2D => iou_2d(&det.box2d, &gt.bbox2d),
            Criterion::Bev => iou_bev(&det.box3d, &gt.box3d()),
            Criterion::Box3D => iou_3d(&det.box3d, &gt.box3d()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RecallPositions {
    R11,
    R40,
}

impl RecallPositions {
    fn count(self) -> u64 {
        match self {
            RecallPositions::R11 => 10,
            RecallPositions::R40 => 40,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RecallPositions::R11 => "AP11",
            RecallPositions::R40 => "AP40",
        }
    }
}

/// Per-difficulty eligibility limits, indexed easy, moderate, hard.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyThresholds {
    pub min_height: [f64; 3],
    pub max_occlusion: [i32; 3],
    pub max_truncation: [f64; 3],
}

impl Default for DifficultyThresholds {
    fn default() -> Self {
        Self { min_height: [40.0, 25.0, 25.0], max_occlusion: [0, 1, 2], max_truncation: [0.15, 0.30, 0.50] }
    }
}

/// Which difficulty pools a ground-truth record counts in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DifficultySet {
    pub dont_care: bool,
    member: [bool; 3],
}

impl DifficultySet {
    pub fn contains(&self, d: Difficulty) -> bool {
        self.member[d.index()]
    }

    /// True when the record counts nowhere (too small, occluded, or a don't-care region).
    pub fn is_ignored(&self) -> bool {
        !self.member.iter().any(|m| *m)
    }
}

pub fn assign_difficulty(gt: &LabelRecord, limits: &DifficultyThresholds) -> DifficultySet {
    if gt.is_dont_care() {
        return DifficultySet { dont_care: true, member: [false; 3] };
    }
    let h = gt.bbox2d.height();
    let mut member = [false; 3];
    for (i, m) in member.iter_mut().enumerate() {
        *m = h >= limits.min_height[i] && gt.occlusion <= limits.max_occlusion[i] && gt.truncation <= limits.max_truncation[i];
    }
    DifficultySet { dont_care: false, member }
}

/// Categories whose ground truth is neither counted nor penalized for `class`.
pub fn neighbor_class(class: &str) -> Option<&'static str> {
    match class {
        "Car" => Some("Van"),
        "Pedestrian" => Some("Person_sitting"),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetOutcome {
    TruePositive(usize),
    FalsePositive,
    /// Not scored: too small, or matched to an ignored object or region.
    Ignored,
    /// Different category.
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatch {
    /// Outcome per detection, in input order.
    pub outcomes: Vec<DetOutcome>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// Ground truths counted at this difficulty.
    pub num_gt: usize,
}

fn box_cmp(a: &Detection, b: &Detection) -> Ordering {
    let k = |d: &Detection| {
        [
            d.box2d.left,
            d.box2d.top,
            d.box2d.right,
            d.box2d.bottom,
            d.box3d.center[0],
            d.box3d.center[1],
            d.box3d.center[2],
            d.box3d.dims.h,
            d.box3d.dims.w,
            d.box3d.dims.l,
            d.box3d.yaw,
        ]
    };
    k(a).iter().zip(k(b).iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Detection processing order: score descending, then box contents, then input index.
pub fn canonical_order(dets: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dets.len()).collect();
    idx.sort_by(|&a, &b| {
        dets[b].score.total_cmp(&dets[a].score).then_with(|| box_cmp(&dets[a], &dets[b])).then(a.cmp(&b))
    });
    idx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum GtRole {
    Counted,
    Ignored,
    Other,
}

/// Greedy matching in canonical order. Each detection takes the
/// best-overlapping unmatched ground truth of its class at or above the
/// threshold; taking a counted one is a true positive, taking an ignored one
/// (wrong difficulty or neighbor class) removes it from scoring. Unmatched
/// detections covering a don't-care region by `threshold` of their own area
/// are not scored either.
#[allow(clippy::too_many_arguments)]
fn match_with(
    dets: &[Detection],
    order: &[usize],
    gts: &[LabelRecord],
    difficulty: &[DifficultySet],
    class: &str,
    level: Difficulty,
    threshold: f64,
    limits: &DifficultyThresholds,
    overlap: impl Fn(usize, usize) -> f64,
) -> FrameMatch {
    let neighbor = neighbor_class(class);
    let roles: Vec<GtRole> = gts
        .iter()
        .zip(difficulty)
        .map(|(g, d)| {
            if g.category == class {
                if d.contains(level) {
                    GtRole::Counted
                } else {
                    GtRole::Ignored
                }
            } else if Some(g.category.as_str()) == neighbor {
                GtRole::Ignored
            } else {
                GtRole::Other
            }
        })
        .collect();
    let min_height = limits.min_height[level.index()];
    let mut taken = vec![false; gts.len()];
    let mut outcomes = vec![DetOutcome::Skipped; dets.len()];
    let (mut tp, mut fp) = (0, 0);
    for &di in order {
        let det = &dets[di];
        if det.category != class {
            continue;
        }
        if det.box2d.height() < min_height {
            outcomes[di] = DetOutcome::Ignored;
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (gi, role) in roles.iter().enumerate() {
            if *role == GtRole::Other || taken[gi] {
                continue;
            }
            let o = overlap(di, gi);
            if !(o >= threshold) {
                continue;
            }
            let better = match best {
                None => true,
                Some((bo, bi)) => o > bo || (o == bo && roles[bi] == GtRole::Ignored && *role == GtRole::Counted),
            };
            if better {
                best = Some((o, gi));
            }
        }
        outcomes[di] = match best {
            Some((_, gi)) => {
                taken[gi] = true;
                if roles[gi] == GtRole::Counted {
                    tp += 1;
                    DetOutcome::TruePositive(gi)
                } else {
                    DetOutcome::Ignored
                }
            }
            None => {
                let in_dont_care = gts
                    .iter()
                    .zip(difficulty)
                    .any(|(g, d)| d.dont_care && ioa_2d(&det.box2d, &g.bbox2d) >= threshold);
                if in_dont_care {
                    DetOutcome::Ignored
                } else {
                    fp += 1;
                    DetOutcome::FalsePositive
                }
            }
        };
    }
    let num_gt = roles.iter().filter(|r| **r == GtRole::Counted).count();
    FrameMatch { outcomes, true_positives: tp, false_positives: fp, false_negatives: num_gt - tp, num_gt }
}

/// Match one frame's detections against its ground truth.
pub fn match_frame(
    dets: &[Detection],
    gts: &[LabelRecord],
    class: &str,
    criterion: Criterion,
    level: Difficulty,
    threshold: f64,
    limits: &DifficultyThresholds,
) -> FrameMatch {
    let order = canonical_order(dets);
    let diff: Vec<DifficultySet> = gts.iter().map(|g| assign_difficulty(g, limits)).collect();
    match_with(dets, &order, gts, &diff, class, level, threshold, limits, |d, g| criterion.overlap(&dets[d], &gts[g]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: f64,
    pub true_positives: u64,
    pub false_positives: u64,
}

/// Precision-recall points at every distinct score, highest score first.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub num_gt: u64,
}

impl PrCurve {
    /// Build from scored outcomes `(score, is_true_positive)` of every scored detection.
    pub fn from_scored(mut scored: Vec<(f64, bool)>, num_gt: u64) -> Self {
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points: Vec<PrPoint> = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (i, (s, hit)) in scored.iter().enumerate() {
            if *hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let last_of_group = scored.get(i + 1).is_none_or(|n| n.0.total_cmp(s).is_ne());
            if last_of_group {
                points.push(PrPoint { threshold: *s, true_positives: tp, false_positives: fp });
            }
        }
        Self { points, num_gt }
    }

    pub fn precision(p: &PrPoint) -> f64 {
        p.true_positives as f64 / (p.true_positives + p.false_positives) as f64
    }

    pub fn recall(&self, p: &PrPoint) -> f64 {
        p.true_positives as f64 / self.num_gt as f64
    }
}

/// Mean interpolated precision at the given recall positions; `None` with no
/// ground truth. Interpolated precision at recall `r` is the best precision
/// among points reaching recall `r`. Forty positions skip recall 0, eleven
/// include it.
pub fn ap(curve: &PrCurve, positions: RecallPositions) -> Option<f64> {
    if curve.num_gt == 0 {
        return None;
    }
    let n = positions.count();
    let first = match positions {
        RecallPositions::R11 => 0,
        RecallPositions::R40 => 1,
    };
    // Best precision reachable at or beyond each point, from the low-score end.
    let mut best_after = vec![0.0f64; curve.points.len() + 1];
    for i in (0..curve.points.len()).rev() {
        best_after[i] = best_after[i + 1].max(PrCurve::precision(&curve.points[i]));
    }
    let mut sum = 0.0;
    let mut cursor = 0;
    for k in first..=n {
        // First point whose recall reaches k / n, compared exactly in integers.
        while cursor < curve.points.len() && curve.points[cursor].true_positives * n < k * curve.num_gt {
            cursor += 1;
        }
        sum += best_after[cursor];
    }
    Some(sum / (n + 1 - first) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassThresholds {
    pub class: String,
    pub iou: Vec<f64>,
}

impl ClassThresholds {
    /// 0.7 and 0.5 for cars, 0.5 otherwise.
    pub fn standard(class: &str) -> Self {
        let iou = if class == "Car" { vec![0.7, 0.5] } else { vec![0.5] };
        Self { class: class.to_string(), iou }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub classes: Vec<ClassThresholds>,
    pub criteria: Vec<Criterion>,
    pub difficulty: DifficultyThresholds,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::for_classes(&["Car"])
    }
}

impl EvalConfig {
    pub fn for_classes(classes: &[&str]) -> Self {
        Self {
            classes: classes.iter().map(|c| ClassThresholds::standard(c)).collect(),
            criteria: Criterion::ALL.to_vec(),
            difficulty: DifficultyThresholds::default(),
        }
    }
}

/// Ground truth and predictions for one frame.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameData {
    pub id: String,
    pub ground_truth: Vec<LabelRecord>,
    pub predictions: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub class: String,
    pub criterion: Criterion,
    pub positions: RecallPositions,
    pub difficulty: Difficulty,
    pub iou: f64,
    /// `None` when no ground truth was counted.
    pub value: Option<f64>,
}

impl Metric {
    pub fn key(&self) -> String {
        format!(
            "{}_{}_{}_{}_iou{:.2}",
            self.class,
            self.criterion.name(),
            self.positions.name(),
            self.difficulty.name(),
            self.iou
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub frames: usize,
    pub metrics: Vec<Metric>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn get(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.key() == key).and_then(|m| m.value)
    }

    pub fn absent(&self) -> Vec<String> {
        self.metrics.iter().filter(|m| m.value.is_none()).map(Metric::key).collect()
    }

    /// `key value` lines, six decimals; absent metrics are omitted.
    pub fn to_key_value(&self) -> String {
        let mut s = String::new();
        for m in &self.metrics {
            if let Some(v) = m.value {
                let _ = writeln!(s, "{} {:.6}", m.key(), v);
            }
        }
        s
    }

    /// Human-readable table, one block per class, criterion and threshold.
    pub fn to_table(&self) -> String {
        let mut s = format!("frames evaluated: {}\n", self.frames);
        let cell = |v: Option<f64>| v.map_or_else(|| format!("{:>9}", "-"), |v| format!("{:>9.2}", 100.0 * v));
        let mut i = 0;
        while i < self.metrics.len() {
            let m = &self.metrics[i];
            if i == 0 || m.class != self.metrics[i - 1].class || m.iou != self.metrics[i - 1].iou {
                let _ = writeln!(s, "\n{} IoU >= {:.2}", m.class, m.iou);
                let _ = writeln!(s, "{:<12}{:>9}{:>9}{:>9}", "", "easy", "moderate", "hard");
            }
            let row: Vec<String> = self.metrics[i..i + 3].iter().map(|m| cell(m.value)).collect();
            let _ = writeln!(s, "{:<12}{}", format!("{} {}", m.criterion.name(), m.positions.name()), row.concat());
            i += 3;
        }
        s
    }
}

/// Scored outcomes of one frame for every metric slot.
fn frame_outcomes(frame: &FrameData, cfg: &EvalConfig) -> Vec<(Vec<(f64, bool)>, u64)> {
    let dets = &frame.predictions;
    let gts = &frame.ground_truth;
    let order = canonical_order(dets);
    let diff: Vec<DifficultySet> = gts.iter().map(|g| assign_difficulty(g, &cfg.difficulty)).collect();
    let mut out = Vec::new();
    for class in &cfg.classes {
        for &criterion in &cfg.criteria {
            let relevant = |d: &Detection| d.category == class.class;
            let overlaps: Vec<Vec<f64>> = dets
                .iter()
                .map(|d| {
                    if relevant(d) {
                        gts.iter().map(|g| if g.is_dont_care() { 0.0 } else { criterion.overlap(d, g) }).collect()
                    } else {
                        Vec::new()
                    }
                })
                .collect();
            for &threshold in &class.iou {
                for level in Difficulty::ALL {
                    let m = match_with(
                        dets,
                        &order,
                        gts,
                        &diff,
                        &class.class,
                        level,
                        threshold,
                        &cfg.difficulty,
                        |d, g| overlaps[d][g],
                    );
                    let scored = m
                        .outcomes
                        .iter()
                        .zip(dets)
                        .filter_map(|(o, d)| match o {
                            DetOutcome::TruePositive(_) => Some((d.score, true)),
                            DetOutcome::FalsePositive => Some((d.score, false)),
                            _ => None,
                        })
                        .collect();
                    out.push((scored, m.num_gt as u64));
                }
            }
        }
    }
    out
}

fn slots(cfg: &EvalConfig) -> Vec<(String, Criterion, f64, Difficulty)> {
    let mut v = Vec::new();
    for class in &cfg.classes {
        for &criterion in &cfg.criteria {
            for &t in &class.iou {
                for level in Difficulty::ALL {
                    v.push((class.class.clone(), criterion, t, level));
                }
            }
        }
    }
    v
}

/// Evaluate in-memory frames. Results do not depend on frame order.
pub fn evaluate_frames(frames: &[FrameData], cfg: &EvalConfig) -> Report {
    let per_frame: Vec<Vec<(Vec<(f64, bool)>, u64)>> = frames.par_iter().map(|f| frame_outcomes(f, cfg)).collect();
    let slots = slots(cfg);
    let mut pooled: Vec<(Vec<(f64, bool)>, u64)> = vec![(Vec::new(), 0); slots.len()];
    for frame in per_frame {
        for ((scored, n), (acc, total)) in frame.into_iter().zip(pooled.iter_mut()) {
            acc.extend(scored);
            *total += n;
        }
    }
    let curves: Vec<PrCurve> = pooled.into_par_iter().map(|(s, n)| PrCurve::from_scored(s, n)).collect();
    // Emit in table order: class, threshold, criterion, positions, difficulty.
    let mut metrics = Vec::new();
    for class in &cfg.classes {
        for &t in &class.iou {
            for &criterion in &cfg.criteria {
                for positions in [RecallPositions::R40, RecallPositions::R11] {
                    for level in Difficulty::ALL {
                        let i = slots
                            .iter()
                            .position(|s| s.0 == class.class && s.1 == criterion && s.2 == t && s.3 == level)
                            .expect("slot exists");
                        metrics.push(Metric {
                            class: class.class.clone(),
                            criterion,
                            positions,
                            difficulty: level,
                            iou: t,
                            value: ap(&curves[i], positions),
                        });
                    }
                }
            }
        }
    }
    Report { frames: frames.len(), metrics, warnings: Vec::new() }
}

fn list_frames(dir: &Path) -> Result<Vec<String>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Empty(format!("{}: {e}", dir.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(parse_frame_file_name).map(|n| format!("{n:06}")))
        .collect();
    ids.sort();
    ids.dedup();
    Ok(ids)
}

fn read_labels(path: &Path) -> Result<Option<Vec<LabelRecord>>> {
    match std::fs::read_to_string(path) {
        Ok(text) => parse_labels(&text).map(Some).map_err(|e| match e {
            Error::Malformed { line, reason } => {
                Error::Malformed { line, reason: format!("{}: {reason}", path.display()) }
            }
            other => other,
        }),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(Error::Malformed { line: 0, reason: format!("{}: {e}", path.display()) }),
    }
}

/// Evaluate label files in `pred_dir` against `gt_dir`. With no explicit
/// frame list, every frame in `gt_dir` is used. A missing prediction file
/// counts as an empty detector output and is reported as a warning.
pub fn evaluate(pred_dir: &Path, gt_dir: &Path, frame_ids: Option<&[String]>, cfg: &EvalConfig) -> Result<Report> {
    let ids = match frame_ids {
        Some(ids) => ids.to_vec(),
        None => list_frames(gt_dir)?,
    };
    let loaded: Vec<Result<(FrameData, Option<String>)>> = ids
        .par_iter()
        .map(|id| {
            let name = format!("{id}.txt");
            let gt = read_labels(&gt_dir.join(&name))?
                .ok_or_else(|| Error::Empty(format!("missing ground truth {}", gt_dir.join(&name).display())))?;
            let (pred, warning) = match read_labels(&pred_dir.join(&name))? {
                Some(p) => (p, None),
                None => (Vec::new(), Some(format!("no predictions for frame {id}"))),
            };
            Ok((
                FrameData { id: id.clone(), ground_truth: gt, predictions: pred.iter().map(Detection::from_label).collect() },
                warning,
            ))
        })
        .collect();
    let mut frames = Vec::with_capacity(loaded.len());
    let mut warnings = Vec::new();
    for r in loaded {
        let (f, w) = r?;
        frames.push(f);
        warnings.extend(w);
    }
    if let Ok(pred_ids) = list_frames(pred_dir) {
        let known: std::collections::BTreeSet<&String> = ids.iter().collect();
        let extra = pred_ids.iter().filter(|p| !known.contains(p)).count();
        if extra > 0 {
            warnings.push(format!("{extra} prediction files have no ground truth and were skipped"));
        }
    }
    let mut report = evaluate_frames(&frames, cfg);
    report.warnings = warnings;
    Ok(report)
}
