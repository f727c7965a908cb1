//! Hill-climbing refinement of 3D boxes against their own 2D detections.

use rayon::prelude::*;

use crate::boxes::{alpha_from_yaw, iou_2d, project_box, yaw_from_alpha, Box2D, Box3D, ObservationAngle};
use crate::camera::{backproject, project, CameraIntrinsics};
use crate::detection::Detection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RefineVariables {
    #[default]
    AngleOnly,
    AngleAndDepth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HillClimbConfig {
    pub variables: RefineVariables,
    /// Initial observation-angle step, radians.
    pub step_alpha: f64,
    /// Initial depth step, meters.
    pub step_z: f64,
    pub shrink: f64,
    pub max_iterations: u32,
    /// A move must raise the IoU by more than this to be taken.
    pub epsilon: f64,
    /// Steps are not shrunk below these.
    pub min_step_alpha: f64,
    pub min_step_z: f64,
}

impl Default for HillClimbConfig {
    fn default() -> Self {
        Self {
            variables: RefineVariables::AngleOnly,
            step_alpha: 0.1,
            step_z: 1.0,
            shrink: 0.5,
            max_iterations: 50,
            epsilon: 1e-6,
            min_step_alpha: 1e-4,
            min_step_z: 1e-3,
        }
    }
}

impl HillClimbConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.step_alpha > 0.0 && self.step_z > 0.0) {
            return bad(format!("steps must be positive, got {} and {}", self.step_alpha, self.step_z));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return bad(format!("shrink {} outside (0, 1)", self.shrink));
        }
        if self.max_iterations == 0 {
            return bad("max iterations must be at least 1".into());
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} is negative", self.epsilon));
        }
        if !(self.min_step_alpha > 0.0 && self.min_step_z > 0.0) {
            return bad("minimum steps must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Refined {
    pub box3d: Box3D,
    pub alpha: f64,
    pub initial_iou: f64,
    pub iou: f64,
    pub accepted_moves: u32,
    pub iterations: u32,
}

struct State {
    box3d: Box3D,
    alpha: f64,
    iou: f64,
}

fn candidate(base: &Box3D, alpha: f64, depth: Option<f64>, intr: &CameraIntrinsics) -> Result<(Box3D, f64)> {
    let mut b = *base;
    if let Some(z) = depth {
        if !(z > 0.0) {
            return Err(Error::NonPositiveDepth(z));
        }
        let [u, v] = project(base.volume_center(), intr)?;
        let [x, y, _] = backproject(u, v, z, intr)?;
        b.center = [x, y + b.dims.h / 2.0, z];
    }
    let alpha = ObservationAngle::new(alpha);
    b.yaw = yaw_from_alpha(alpha, b.center[0], b.center[2])?;
    Ok((b, alpha.radians()))
}

fn objective(b: &Box3D, target: &Box2D, intr: &CameraIntrinsics) -> Option<f64> {
    project_box(b, intr).ok().map(|p| iou_2d(&p, target))
}

/// Coordinate-descent hill climbing on the observation angle (and, if
/// enabled, depth) to maximize IoU between `box2d` and the projection of
/// the 3D box.
///
/// Moves are tried in the order `+alpha, -alpha, +z, -z`; the best strictly
/// improving one is taken, otherwise steps shrink. When steps bottom out
/// after any accepted move, the search restarts from the initial steps, and
/// it stops once a whole sweep accepts nothing.
pub fn refine(box3d: &Box3D, box2d: &Box2D, intr: &CameraIntrinsics, cfg: &HillClimbConfig) -> Result<Refined> {
    cfg.validate()?;
    let initial_iou = project_box(box3d, intr).map(|p| iou_2d(&p, box2d))?;
    let mut cur = State {
        box3d: *box3d,
        alpha: alpha_from_yaw(box3d.yaw, box3d.center[0], box3d.center[2])?.radians(),
        iou: initial_iou,
    };
    let depth_on = cfg.variables == RefineVariables::AngleAndDepth;
    let (mut sa, mut sz) = (cfg.step_alpha, cfg.step_z);
    let mut accepted = 0;
    let mut accepted_in_sweep = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut moves = vec![(cur.alpha + sa, None), (cur.alpha - sa, None)];
        if depth_on {
            let z = cur.box3d.center[2];
            moves.push((cur.alpha, Some(z + sz)));
            moves.push((cur.alpha, Some(z - sz)));
        }
        let mut best: Option<State> = None;
        for (alpha, depth) in moves {
            let Ok((b, alpha)) = candidate(&cur.box3d, alpha, depth, intr) else { continue };
            let Some(iou) = objective(&b, box2d, intr) else { continue };
            let bar = best.as_ref().map_or(cur.iou + cfg.epsilon, |s| s.iou);
            if iou > bar {
                best = Some(State { box3d: b, alpha, iou });
            }
        }
        if let Some(s) = best {
            cur = s;
            accepted += 1;
            accepted_in_sweep = true;
            continue;
        }
        let alpha_done = sa * cfg.shrink < cfg.min_step_alpha;
        let z_done = !depth_on || sz * cfg.shrink < cfg.min_step_z;
        if alpha_done && z_done {
            if !accepted_in_sweep {
                break;
            }
            accepted_in_sweep = false;
            sa = cfg.step_alpha;
            sz = cfg.step_z;
        } else {
            sa = (sa * cfg.shrink).max(cfg.min_step_alpha);
            sz = (sz * cfg.shrink).max(cfg.min_step_z);
        }
    }
    Ok(Refined {
        box3d: cur.box3d,
        alpha: cur.alpha,
        initial_iou,
        iou: cur.iou,
        accepted_moves: accepted,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinedDetection {
    pub detection: Detection,
    pub initial_iou: f64,
    pub iou: f64,
    /// Set when the detection could not be refined and was passed through.
    pub skipped: bool,
}

/// Refine every detection independently; order and scores are preserved.
pub fn refine_set(detections: &[Detection], intr: &CameraIntrinsics, cfg: &HillClimbConfig) -> Result<Vec<RefinedDetection>> {
    cfg.validate()?;
    Ok(detections
        .par_iter()
        .map(|d| match refine(&d.box3d, &d.box2d, intr, cfg) {
            Ok(r) => {
                let mut detection = d.clone();
                if r.accepted_moves > 0 {
                    detection.box3d = r.box3d;
                    detection.alpha = r.alpha;
                }
                RefinedDetection { detection, initial_iou: r.initial_iou, iou: r.iou, skipped: false }
            }
            Err(_) => RefinedDetection { detection: d.clone(), initial_iou: 0.0, iou: 0.0, skipped: true },
        })
        .collect())
}
