use super::{AnchorGrid, AnchorStats};
use crate::boxes::{alpha_from_yaw, iou_2d, yaw_from_alpha, Box2D, Box3D, Dimensions, ObservationAngle};
use crate::camera::{backproject, project, CameraIntrinsics};
use crate::detection::Detection;
use crate::error::{Error, Result};
use crate::kitti::LabelRecord;

/// Twelve normalized regression values of one anchor:
/// `dx dy dw dh | dcx dcy dz | dw3d dh3d dl3d | dsin dcos`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegressionTarget(pub [f64; 12]);

impl RegressionTarget {
    pub const LEN: usize = 12;
    pub const DZ: usize = 6;
    pub const DIMS: std::ops::Range<usize> = 7..10;

    pub fn values(&self) -> &[f64; 12] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignConfig {
    pub iou_fg: f64,
    pub iou_bg: f64,
    /// Categories that become foreground; the index is the class target.
    pub classes: Vec<String>,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self { iou_fg: 0.5, iou_bg: 0.4, classes: vec!["Car".to_string()] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorLabel {
    Background,
    Ignored,
    /// Index of the assigned ground truth in the label slice.
    Foreground(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundTarget {
    pub anchor: usize,
    pub gt: usize,
    pub class: usize,
    pub regression: RegressionTarget,
    /// Ground-truth `(h, w, l)`, for the multi-bin dimension head.
    pub dims: Dimensions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTargets {
    pub labels: Vec<AnchorLabel>,
    pub foreground: Vec<ForegroundTarget>,
}

impl EncodedTargets {
    pub fn count(&self, pred: impl Fn(&AnchorLabel) -> bool) -> usize {
        self.labels.iter().filter(|l| pred(l)).count()
    }
}

fn safe_ln(x: f64) -> f64 {
    x.max(1e-9).ln()
}

/// Assign anchors to ground truth and encode regression targets.
///
/// Anchors with best IoU `>= iou_fg` are foreground, below `iou_bg`
/// background, otherwise ignored. Every ground truth additionally claims
/// its best-overlapping kept anchor so that none is left without a
/// positive. Anchors rejected by `mask` are ignored.
pub fn encode_targets(
    grid: &AnchorGrid,
    stats: &AnchorStats,
    labels: &[LabelRecord],
    intr: &CameraIntrinsics,
    cfg: &AssignConfig,
    mask: Option<&[bool]>,
) -> Result<EncodedTargets> {
    if !(cfg.iou_bg <= cfg.iou_fg) {
        return Err(Error::InvalidParameter(format!(
            "background IoU {} exceeds foreground IoU {}",
            cfg.iou_bg, cfg.iou_fg
        )));
    }
    if let Some(m) = mask {
        if m.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("mask of {} for {} anchors", m.len(), grid.len())));
        }
    }
    let kept = |i: usize| mask.is_none_or(|m| m[i]);

    let gts: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, r)| cfg.classes.iter().position(|c| *c == r.category).map(|k| (i, k)))
        .collect();

    let mut best = vec![(0.0f64, usize::MAX); grid.len()];
    let mut claimed: Vec<Option<(f64, usize)>> = vec![None; gts.len()];
    for (g, &(gi, _)) in gts.iter().enumerate() {
        let target = &labels[gi].bbox2d;
        for shape in 0..grid.shapes().len() {
            for a in grid.overlapping(shape, target) {
                let idx = grid.flat_index(a);
                let iou = iou_2d(&grid.anchor_box(a), target);
                if iou > best[idx].0 {
                    best[idx] = (iou, g);
                }
                if kept(idx) && iou > 0.0 && claimed[g].is_none_or(|(b, bi)| iou > b || (iou == b && idx < bi)) {
                    claimed[g] = Some((iou, idx));
                }
            }
        }
    }

    let mut assign: Vec<Option<usize>> = vec![None; grid.len()];
    let mut out_labels = Vec::with_capacity(grid.len());
    for (idx, &(iou, g)) in best.iter().enumerate() {
        let label = if !kept(idx) {
            AnchorLabel::Ignored
        } else if g != usize::MAX && iou >= cfg.iou_fg {
            assign[idx] = Some(g);
            AnchorLabel::Foreground(gts[g].0)
        } else if iou < cfg.iou_bg {
            AnchorLabel::Background
        } else {
            AnchorLabel::Ignored
        };
        out_labels.push(label);
    }
    for (g, c) in claimed.iter().enumerate() {
        if let Some((_, idx)) = c {
            assign[*idx] = Some(g);
            out_labels[*idx] = AnchorLabel::Foreground(gts[g].0);
        }
    }

    let mut foreground = Vec::new();
    for (idx, g) in assign.iter().enumerate() {
        let Some(g) = *g else { continue };
        let (gi, class) = gts[g];
        let a = grid.unflatten(idx);
        let prior = stats
            .prior(a.shape)
            .ok_or_else(|| Error::MissingStats(format!("anchor shape {} matched but unusable", a.shape)))?;
        let gt = &labels[gi];
        let dim = stats
            .class_dims(&gt.category)
            .ok_or_else(|| Error::MissingStats(format!("dimension statistics for {}", gt.category)))?;
        let abox = grid.anchor_box(a);
        let (ax, ay) = abox.center();
        let (aw, ah) = (abox.width(), abox.height());
        let (gx, gy) = gt.bbox2d.center();
        let [cx, cy] = project(gt.box3d().volume_center(), intr)?;
        let z = gt.location[2];
        let (sin, cos) = gt.alpha.sin_cos();
        let std = dim.std();
        let mut t = [0.0; 12];
        t[0] = (gx - ax) / aw;
        t[1] = (gy - ay) / ah;
        t[2] = safe_ln(gt.bbox2d.width() / aw);
        t[3] = safe_ln(gt.bbox2d.height() / ah);
        t[4] = (cx - ax) / aw;
        t[5] = (cy - ay) / ah;
        t[6] = (z - prior.mean_z) / prior.std_z;
        t[7] = (gt.dims.w - dim.mean[1]) / std[1];
        t[8] = (gt.dims.h - dim.mean[0]) / std[0];
        t[9] = (gt.dims.l - dim.mean[2]) / std[2];
        t[10] = (sin - prior.mean_sin) / prior.std_sin;
        t[11] = (cos - prior.mean_cos) / prior.std_cos;
        foreground.push(ForegroundTarget { anchor: idx, gt: gi, class, regression: RegressionTarget(t), dims: gt.dims });
    }
    Ok(EncodedTargets { labels: out_labels, foreground })
}

/// Invert [`encode_targets`] for scored anchors `(flat index, regression, score)`.
///
/// Anchors decoding to a nonpositive depth are dropped.
pub fn decode_targets(
    grid: &AnchorGrid,
    stats: &AnchorStats,
    predictions: &[(usize, RegressionTarget, f64)],
    category: &str,
    intr: &CameraIntrinsics,
) -> Result<Vec<Detection>> {
    let dim = stats
        .class_dims(category)
        .ok_or_else(|| Error::MissingStats(format!("dimension statistics for {category}")))?;
    let std = dim.std();
    let mut out = Vec::with_capacity(predictions.len());
    for (idx, reg, score) in predictions {
        if *idx >= grid.len() {
            return Err(Error::ShapeMismatch(format!("anchor {idx} outside a grid of {}", grid.len())));
        }
        let a = grid.unflatten(*idx);
        let prior = stats
            .prior(a.shape)
            .ok_or_else(|| Error::MissingStats(format!("anchor shape {} unusable", a.shape)))?;
        let t = &reg.0;
        let abox = grid.anchor_box(a);
        let (ax, ay) = abox.center();
        let (aw, ah) = (abox.width(), abox.height());
        let box2d = Box2D::from_center(ax + t[0] * aw, ay + t[1] * ah, aw * t[2].exp(), ah * t[3].exp());
        let (cx, cy) = (ax + t[4] * aw, ay + t[5] * ah);
        let z = prior.mean_z + t[6] * prior.std_z;
        if !(z > 0.0) {
            continue;
        }
        let dims = Dimensions {
            w: (dim.mean[1] + t[7] * std[1]).max(0.0),
            h: (dim.mean[0] + t[8] * std[0]).max(0.0),
            l: (dim.mean[2] + t[9] * std[2]).max(0.0),
        };
        let alpha = ObservationAngle::from_sin_cos(
            prior.mean_sin + t[10] * prior.std_sin,
            prior.mean_cos + t[11] * prior.std_cos,
        );
        let [x, yc, _] = backproject(cx, cy, z, intr)?;
        let yaw = yaw_from_alpha(alpha, x, z)?;
        let box3d = Box3D { center: [x, yc + dims.h / 2.0, z], dims, yaw };
        out.push(Detection {
            category: category.to_string(),
            box2d,
            box3d,
            alpha: alpha_from_yaw(yaw, x, z)?.radians(),
            score: *score,
        });
    }
    Ok(out)
}
