//! Dense 3D anchors: a grid of 2D boxes, each shape carrying depth and
//! orientation priors gathered from a labelled corpus.

mod stats;
mod targets;

pub use stats::{collect_stats, AnchorStats, ClassDimStats, ShapePrior, ShapeStats, StatsConfig, STD_FLOOR};
pub use targets::{
    decode_targets, encode_targets, AnchorLabel, AssignConfig, EncodedTargets, ForegroundTarget, RegressionTarget,
};

use crate::boxes::Box2D;
use crate::camera::{backproject_with, BackprojectMode, CameraIntrinsics, GroundModel};
use crate::error::{Error, Result};

/// Width and height of an anchor box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorShape {
    pub w: f64,
    pub h: f64,
}

impl AnchorShape {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    stride: u32,
    rows: usize,
    cols: usize,
    shapes: Vec<AnchorShape>,
}

/// Location of one anchor in the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorIndex {
    pub row: usize,
    pub col: usize,
    pub shape: usize,
}

impl AnchorGrid {
    /// Shapes are every `scale × ratio` pair, scale-major. `scale` is the
    /// square root of the box area and `ratio` is height over width.
    pub fn build(intr: &CameraIntrinsics, stride: u32, scales: &[f64], ratios: &[f64]) -> Result<Self> {
        if scales.is_empty() || ratios.is_empty() {
            return Err(Error::Empty("anchor scales and ratios".into()));
        }
        if stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        if scales.iter().chain(ratios).any(|x| !(*x > 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("scales and ratios must be positive".into()));
        }
        let shapes = scales
            .iter()
            .flat_map(|&s| ratios.iter().map(move |&r| AnchorShape { w: s / r.sqrt(), h: s * r.sqrt() }))
            .collect();
        Ok(Self {
            stride,
            rows: intr.image_h.div_ceil(stride) as usize,
            cols: intr.image_w.div_ceil(stride) as usize,
            shapes,
        })
    }

    pub fn from_shapes(stride: u32, rows: usize, cols: usize, shapes: Vec<AnchorShape>) -> Result<Self> {
        if shapes.is_empty() {
            return Err(Error::Empty("anchor shapes".into()));
        }
        if shapes.iter().any(|s| !(s.w > 0.0 && s.h > 0.0)) {
            return Err(Error::InvalidParameter("anchor shapes must be positive".into()));
        }
        if stride == 0 || rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter("grid must be non-empty".into()));
        }
        Ok(Self { stride, rows, cols, shapes })
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shapes(&self) -> &[AnchorShape] {
        &self.shapes
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols * self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat_index(&self, a: AnchorIndex) -> usize {
        (a.row * self.cols + a.col) * self.shapes.len() + a.shape
    }

    pub fn unflatten(&self, i: usize) -> AnchorIndex {
        let n = self.shapes.len();
        AnchorIndex { row: i / (n * self.cols), col: (i / n) % self.cols, shape: i % n }
    }

    /// Pixel-center position of a grid cell.
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let s = f64::from(self.stride);
        ((col as f64 + 0.5) * s, (row as f64 + 0.5) * s)
    }

    pub fn anchor_box(&self, a: AnchorIndex) -> Box2D {
        let (u, v) = self.center(a.row, a.col);
        let shape = self.shapes[a.shape];
        Box2D::from_center(u, v, shape.w, shape.h)
    }

    /// Anchors of `shape` whose boxes overlap `target` with positive area.
    pub(crate) fn overlapping(&self, shape: usize, target: &Box2D) -> impl Iterator<Item = AnchorIndex> {
        let s = f64::from(self.stride);
        let AnchorShape { w, h } = self.shapes[shape];
        // centers strictly inside (left - w/2, right + w/2)
        let range = |lo: f64, hi: f64, n: usize| {
            let first = ((lo / s - 0.5).floor() + 1.0).max(0.0);
            let last = ((hi / s - 0.5).ceil() - 1.0).min(n as f64 - 1.0);
            if last < first {
                (1usize, 0usize)
            } else {
                (first as usize, last as usize)
            }
        };
        let (c0, c1) = range(target.left - w / 2.0, target.right + w / 2.0, self.cols);
        let (r0, r1) = range(target.top - h / 2.0, target.bottom + h / 2.0, self.rows);
        (r0..=r1)
            .filter(move |_| c0 <= c1)
            .flat_map(move |row| (c0..=c1).map(move |col| AnchorIndex { row, col, shape }))
    }
}

/// Keep mask for ground filtering. An infinite tolerance disables filtering
/// entirely (every anchor kept); otherwise anchors of unusable shapes are
/// dropped and the rest are kept when their center, back-projected at the
/// shape's mean depth, lies within `tolerance` meters of the ground elevation.
pub fn filter_ground(
    grid: &AnchorGrid,
    stats: &AnchorStats,
    intr: &CameraIntrinsics,
    ground: &GroundModel,
    tolerance: f64,
) -> Result<Vec<bool>> {
    filter_ground_with(grid, stats, intr, ground, tolerance, BackprojectMode::Exact)
}

pub fn filter_ground_with(
    grid: &AnchorGrid,
    stats: &AnchorStats,
    intr: &CameraIntrinsics,
    ground: &GroundModel,
    tolerance: f64,
    mode: BackprojectMode,
) -> Result<Vec<bool>> {
    if stats.shapes().len() != grid.shapes().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} anchor shapes but statistics for {}",
            grid.shapes().len(),
            stats.shapes().len()
        )));
    }
    if !(tolerance >= 0.0) {
        return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {tolerance}")));
    }
    if tolerance == f64::INFINITY {
        return Ok(vec![true; grid.len()]);
    }
    let depths: Vec<Option<f64>> = (0..grid.shapes().len())
        .map(|s| stats.prior(s).map(|p| p.mean_z).filter(|z| *z > 0.0))
        .collect();
    let mut mask = Vec::with_capacity(grid.len());
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let (u, v) = grid.center(row, col);
            for z in &depths {
                let keep = match z {
                    Some(z) => {
                        let [_, y, _] = backproject_with(u, v, *z, intr, mode)?;
                        (y - ground.elevation).abs() <= tolerance
                    }
                    None => false,
                };
                mask.push(keep);
            }
        }
    }
    Ok(mask)
}

/// Kept anchors per feature row.
pub fn keep_counts_per_row(grid: &AnchorGrid, mask: &[bool]) -> Vec<usize> {
    let per_row = grid.cols() * grid.shapes().len();
    mask.chunks(per_row).map(|c| c.iter().filter(|k| **k).count()).collect()
}
