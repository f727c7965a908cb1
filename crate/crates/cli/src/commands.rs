use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use groundaware_core::anchors::{collect_stats, filter_ground, keep_counts_per_row, AnchorGrid, AnchorStats, StatsConfig};
use groundaware_core::camera::{depth_prior_map, CameraIntrinsics};
use groundaware_core::detection::Detection;
use groundaware_core::evaluation::{evaluate, Report};
use groundaware_core::kitti::{
    crop_top, frame_file_name, parse_calibration, parse_frame_file_name, parse_labels, write_calibration, write_labels,
    CalibrationFile, LabelPrecision, LabelRecord,
};
use groundaware_core::postopt::refine_set;
use groundaware_core::synthetic::generate;

use crate::{CliError, RunConfig};

pub const STATS_FILE: &str = "anchor_stats.txt";

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn compute(e: impl std::fmt::Display) -> CliError {
    CliError::Compute(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Compute(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Compute(format!("{}: {e}", path.display())))
}

fn ids_in(dir: &Path) -> Result<Vec<String>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().and_then(parse_frame_file_name))
        .map(|n| format!("{n:06}"))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Frame IDs from the split file, or every label file when no split is set.
pub fn frame_ids(cfg: &RunConfig) -> Result<Vec<String>, CliError> {
    let ids = match &cfg.split {
        Some(path) => read(path)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect(),
        None => ids_in(&cfg.label_dir())?,
    };
    if ids.is_empty() {
        return Err(CliError::Input("empty split".into()));
    }
    Ok(ids)
}

fn require_files(dirs: &[PathBuf], ids: &[String]) -> Result<(), CliError> {
    let missing: Vec<String> = ids
        .iter()
        .flat_map(|id| dirs.iter().map(move |d| d.join(format!("{id}.txt"))))
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<&str> = missing.iter().take(20).map(String::as_str).collect();
    let more = missing.len().saturating_sub(shown.len());
    let mut msg = format!("{} missing input files:\n  {}", missing.len(), shown.join("\n  "));
    if more > 0 {
        let _ = write!(msg, "\n  ... and {more} more");
    }
    Err(CliError::Input(msg))
}

fn load_calib(cfg: &RunConfig, id: &str) -> Result<CalibrationFile, CliError> {
    let path = cfg.calib_dir().join(format!("{id}.txt"));
    parse_calibration(&read(&path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn load_labels(path: &Path) -> Result<Vec<LabelRecord>, CliError> {
    parse_labels(&read(path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Camera of the cropped network input.
fn input_camera(cfg: &RunConfig, calib: &CalibrationFile) -> Result<CameraIntrinsics, CliError> {
    let (cropped, _) = crop_top(calib, &[], cfg.crop_top).map_err(input)?;
    cropped.intrinsics("P2", cfg.input_width, cfg.input_height).map_err(input)
}

fn build_grid(cfg: &RunConfig, intr: &CameraIntrinsics) -> Result<AnchorGrid, CliError> {
    AnchorGrid::build(intr, cfg.stride, &cfg.scales, &cfg.ratios).map_err(input)
}

pub struct StatsSummary {
    pub frames: usize,
    pub path: PathBuf,
    pub stats: AnchorStats,
}

impl StatsSummary {
    pub fn table(&self) -> String {
        let mut s = format!("{:>8} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8}\n", "w", "h", "count", "mean_z", "var_z", "mean_sin", "mean_cos");
        for (shape, st) in self.stats.shapes() {
            let _ = writeln!(
                s,
                "{:>8.1} {:>8.1} {:>8} {:>10.3} {:>10.3} {:>8.3} {:>8.3}",
                shape.w, shape.h, st.count, st.mean_z, st.var_z, st.mean_sin, st.mean_cos
            );
        }
        s
    }
}

/// Anchor statistics over the split, written to `<out>/anchor_stats.txt`.
pub fn cmd_stats(cfg: &RunConfig) -> Result<StatsSummary, CliError> {
    cfg.validate()?;
    let ids = frame_ids(cfg)?;
    require_files(&[cfg.calib_dir(), cfg.label_dir()], &ids)?;
    let frames: Vec<(CameraIntrinsics, Vec<LabelRecord>)> = ids
        .par_iter()
        .map(|id| {
            let calib = load_calib(cfg, id)?;
            let labels = load_labels(&cfg.label_dir().join(format!("{id}.txt")))?;
            let (_, labels) = crop_top(&calib, &labels, cfg.crop_top).map_err(input)?;
            Ok((input_camera(cfg, &calib)?, labels))
        })
        .collect::<Result<_, CliError>>()?;
    let grid = build_grid(cfg, &frames[0].0)?;
    let corpus: Vec<&[LabelRecord]> = frames.iter().map(|f| f.1.as_slice()).collect();
    let stats_cfg = StatsConfig { iou_threshold: cfg.stats_iou, min_support: cfg.min_support, classes: cfg.classes.clone() };
    let stats = collect_stats(&grid, &corpus, &stats_cfg).map_err(compute)?;
    let path = cfg.out.join(STATS_FILE);
    write(&path, stats.to_text())?;
    info!("anchor statistics over {} frames written to {}", ids.len(), path.display());
    Ok(StatsSummary { frames: ids.len(), path, stats })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditSummary {
    pub total: usize,
    pub kept: usize,
    pub per_row: Vec<usize>,
    pub tolerance: f64,
}

impl AuditSummary {
    pub fn keep_fraction(&self) -> f64 {
        self.kept as f64 / self.total as f64
    }

    pub fn report(&self) -> String {
        let mut s = format!(
            "tolerance {}\ntotal anchors {}\nkept anchors {}\nkeep fraction {:.6}\nremoved fraction {:.6}\nrow kept\n",
            self.tolerance,
            self.total,
            self.kept,
            self.keep_fraction(),
            1.0 - self.keep_fraction()
        );
        for (r, k) in self.per_row.iter().enumerate() {
            let _ = writeln!(s, "{r} {k}");
        }
        s
    }
}

/// Ground-filter mask summary for the camera of the first split frame.
pub fn cmd_filter_audit(cfg: &RunConfig, stats_path: &Path) -> Result<AuditSummary, CliError> {
    cfg.validate()?;
    let stats = AnchorStats::from_text(&read(stats_path)?).map_err(|e| CliError::Input(format!("{}: {e}", stats_path.display())))?;
    let ids = frame_ids(cfg)?;
    require_files(&[cfg.calib_dir()], &ids[..1])?;
    let intr = input_camera(cfg, &load_calib(cfg, &ids[0])?)?;
    let grid = build_grid(cfg, &intr)?;
    if grid.shapes().len() != stats.shapes().len() {
        return Err(CliError::Input(format!(
            "statistics cover {} anchor shapes, configuration has {}",
            stats.shapes().len(),
            grid.shapes().len()
        )));
    }
    let mask = filter_ground(&grid, &stats, &intr, &cfg.ground, cfg.ground_tolerance).map_err(compute)?;
    let summary = AuditSummary {
        total: mask.len(),
        kept: mask.iter().filter(|k| **k).count(),
        per_row: keep_counts_per_row(&grid, &mask),
        tolerance: cfg.ground_tolerance,
    };
    write(&cfg.out.join("filter_audit.txt"), summary.report())?;
    Ok(summary)
}

/// One disparity-prior raster per frame under `<out>/priors`.
pub fn cmd_priors(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.validate()?;
    let ids = frame_ids(cfg)?;
    require_files(&[cfg.calib_dir()], &ids)?;
    let rows = cfg.input_height.div_ceil(cfg.stride) as usize;
    let cols = cfg.input_width.div_ceil(cfg.stride) as usize;
    ids.par_iter().try_for_each(|id| {
        let intr = input_camera(cfg, &load_calib(cfg, id)?)?;
        let map = depth_prior_map(&intr, &cfg.ground, cfg.stride, rows, cols).map_err(compute)?;
        write(&cfg.out.join("priors").join(format!("{id}.gafm")), map.to_raster_bytes())
    })?;
    Ok(ids.len())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PostoptSummary {
    pub frames: usize,
    pub skipped_frames: Vec<String>,
    pub detections: usize,
    pub mean_initial_iou: f64,
    pub mean_final_iou: f64,
}

/// Replace fields of one label line, keeping every other token verbatim.
fn patch_line(line: &str, replacements: &[(usize, f64)]) -> String {
    let mut tokens: Vec<String> = line.split_whitespace().map(String::from).collect();
    for (i, v) in replacements {
        tokens[*i] = v.to_string();
    }
    tokens.join(" ")
}

fn refine_file(cfg: &RunConfig, text: &str, intr: &CameraIntrinsics) -> Result<(String, Vec<(f64, f64)>), CliError> {
    let records = parse_labels(text).map_err(input)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let targets: Vec<usize> = (0..records.len()).filter(|i| !records[*i].is_dont_care()).collect();
    let dets: Vec<Detection> = targets.iter().map(|i| Detection::from_label(&records[*i])).collect();
    let refined = refine_set(&dets, intr, &cfg.hill).map_err(compute)?;
    let mut out: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    let mut ious = Vec::new();
    for ((i, old), r) in targets.iter().zip(&dets).zip(&refined) {
        if r.skipped {
            warn!("detection on line {} passed through unrefined (behind camera)", i + 1);
            continue;
        }
        ious.push((r.initial_iou, r.iou));
        let new = &r.detection;
        if new.box3d == old.box3d {
            continue;
        }
        let mut patch = vec![(3, new.alpha), (14, new.box3d.yaw)];
        if new.box3d.center != old.box3d.center {
            patch.extend([(11, new.box3d.center[0]), (12, new.box3d.center[1]), (13, new.box3d.center[2])]);
        }
        out[*i] = patch_line(lines[*i], &patch);
    }
    let mut text: String = out.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    Ok((text, ious))
}

/// Refine every prediction file in `pred_dir` into `<out>`.
pub fn cmd_postopt(cfg: &RunConfig, pred_dir: &Path) -> Result<PostoptSummary, CliError> {
    cfg.validate()?;
    let ids = match &cfg.split {
        Some(_) => frame_ids(cfg)?,
        None => ids_in(pred_dir)?,
    };
    require_files(&[cfg.calib_dir()], &ids)?;
    type FrameIous = Result<Vec<(f64, f64)>, CliError>;
    let results: Vec<(String, FrameIous)> = ids
        .par_iter()
        .map(|id| {
            let run = || -> Result<Vec<(f64, f64)>, CliError> {
                let text = read(&pred_dir.join(frame_name(id)))?;
                let calib = load_calib(cfg, id)?;
                let intr = calib.intrinsics("P2", cfg.image_width, cfg.image_height).map_err(input)?;
                let (refined, ious) = refine_file(cfg, &text, &intr)?;
                write(&cfg.out.join(frame_name(id)), refined)?;
                Ok(ious)
            };
            (id.clone(), run())
        })
        .collect();
    let mut summary = PostoptSummary::default();
    let (mut before, mut after) = (0.0, 0.0);
    for (id, r) in results {
        match r {
            Ok(ious) => {
                summary.frames += 1;
                if !ious.is_empty() {
                    let (b, a): (f64, f64) = ious.iter().fold((0.0, 0.0), |s, x| (s.0 + x.0, s.1 + x.1));
                    info!("frame {id}: mean IoU {:.4} -> {:.4}", b / ious.len() as f64, a / ious.len() as f64);
                    before += b;
                    after += a;
                }
                summary.detections += ious.len();
            }
            Err(CliError::Input(msg)) => {
                warn!("skipping frame {id}: {msg}");
                summary.skipped_frames.push(id);
            }
            Err(e) => return Err(e),
        }
    }
    if summary.detections > 0 {
        summary.mean_initial_iou = before / summary.detections as f64;
        summary.mean_final_iou = after / summary.detections as f64;
    }
    Ok(summary)
}

fn frame_name(id: &str) -> String {
    match id.parse::<u32>() {
        Ok(n) if id.len() == 6 => frame_file_name(n),
        _ => format!("{id}.txt"),
    }
}

/// Evaluate `pred_dir` against `gt_dir`; writes `report.txt` and `metrics.txt`.
pub fn cmd_eval(cfg: &RunConfig, pred_dir: &Path, gt_dir: &Path) -> Result<Report, CliError> {
    cfg.validate()?;
    if !pred_dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", pred_dir.display())));
    }
    let ids = match &cfg.split {
        Some(_) => Some(frame_ids(cfg)?),
        None => None,
    };
    let report = evaluate(pred_dir, gt_dir, ids.as_deref(), &cfg.eval).map_err(input)?;
    for w in &report.warnings {
        warn!("{w}");
    }
    write(&cfg.out.join("report.txt"), report.to_table())?;
    write(&cfg.out.join("metrics.txt"), report.to_key_value())?;
    Ok(report)
}

/// Synthetic KITTI-layout dataset under `<out>`: `calib/`, `label_2/` and `split.txt`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<usize, CliError> {
    cfg.validate()?;
    let frames = generate(&cfg.synth, cfg.synth_frames).map_err(input)?;
    frames.par_iter().enumerate().try_for_each(|(i, f)| {
        let name = frame_file_name(i as u32);
        write(&cfg.out.join("calib").join(&name), write_calibration(&f.calib))?;
        write(&cfg.out.join("label_2").join(&name), write_labels(&f.labels, LabelPrecision::Full))
    })?;
    let split: String = (0..frames.len()).map(|i| format!("{i:06}\n")).collect();
    write(&cfg.out.join("split.txt"), split)?;
    Ok(frames.len())
}
